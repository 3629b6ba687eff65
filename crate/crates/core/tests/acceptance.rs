//! One check per acceptance criterion. Each prints a `criterion N: PASS|FAIL`
//! line with the measured values; the process fails if any check fails.

use std::time::{Duration, Instant};

use dashgame::adapt::{self, AdaptConfig, Session};
use dashgame::cli::{load_preset, preset_names, set_profile};
use dashgame::game::{closed_form_identical_2user, foc_coefficients, solve_equilibrium};
use dashgame::metrics::{qoe1_samples, qoe2_samples, summarize, QoeMetricParams, QoeSample, SwitchMode};
use dashgame::model::{utility, utility_gradient, utility_hessian_entry, BufferView, GameParams, VideoQualityModel};
use dashgame::netsim::{run_scenario, PolicyKind, Scenario, SessionTrace};
use dashgame::stability::{self, eigenvalues_small};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20240611;

/// Rates are called converged when they enter the band and stay there to the
/// end of the trace, with at least this many segments left.
const CONVERGENCE_TAIL: usize = 10;

fn report(n: u32, ok: bool, detail: impl AsRef<str>) {
    println!("criterion {n}: {} {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(ok, "criterion {n} failed: {}", detail.as_ref());
}

struct Draw {
    params: GameParams,
    models: Vec<VideoQualityModel>,
    bufs: Vec<BufferView>,
    bandwidth: f64,
}

fn model(rng: &mut ChaCha8Rng) -> VideoQualityModel {
    VideoQualityModel::new(rng.gen_range(0.5..5.0), rng.gen_range(0.01..0.5), vec![1.0]).unwrap()
}

fn params(rng: &mut ChaCha8Rng) -> GameParams {
    GameParams::new(
        rng.gen_range(1e-4..0.01),
        rng.gen_range(1e-3..0.2),
        rng.gen_range(0.01..1.0),
        rng.gen_range(1.0..4.0),
    )
    .unwrap()
}

fn draw(rng: &mut ChaCha8Rng, n: usize) -> Draw {
    let params = params(rng);
    let models = (0..n).map(|_| model(rng)).collect();
    let bufs = (0..n)
        .map(|_| BufferView::new(rng.gen_range(0.0..40.0), rng.gen_range(5.0..30.0), rng.gen_range(0.0..10.0)).unwrap())
        .collect();
    Draw {
        params,
        models,
        bufs,
        bandwidth: rng.gen_range(1.0..20.0),
    }
}

fn identical_pair(rng: &mut ChaCha8Rng) -> Draw {
    let params = params(rng);
    let m = model(rng);
    let b = BufferView::at_reference(rng.gen_range(5.0..30.0));
    Draw {
        params,
        models: vec![m.clone(), m],
        bufs: vec![b, b],
        bandwidth: rng.gen_range(1.0..20.0),
    }
}

/// Index of the first segment from which `pred` holds to the end of every trace.
fn settled_from(traces: &[SessionTrace], pred: impl Fn(&SessionTrace, usize) -> bool) -> Option<usize> {
    let len = traces.iter().map(|t| t.records.len()).min()?;
    let mut k = len;
    while k > 0 && traces.iter().all(|t| pred(t, k - 1)) {
        k -= 1;
    }
    if len - k >= CONVERGENCE_TAIL {
        Some(k)
    } else {
        None
    }
}

fn stalls(traces: &[SessionTrace]) -> usize {
    traces.iter().map(|t| t.stall_count()).sum()
}

fn criterion_01_concavity_and_existence() {
    const DRAWS: usize = 1000;
    const BUDGET: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut concave, mut solved, mut worst) = (0, 0, 0.0f64);
    for _ in 0..DRAWS {
        let n = rng.gen_range(1..=8);
        let d = draw(&mut rng, n);
        let rates: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] = utility_hessian_entry(&d.params, &d.models[i], i, j, &rates, d.bandwidth).unwrap();
            }
        }
        let diag_ok = (0..n).all(|i| h[(i, i)] < 0.0);
        let eig = eigenvalues_small(&h).unwrap();
        if diag_ok && eig.iter().all(|e| e.re < 0.0) {
            concave += 1;
        }
        let eq = solve_equilibrium(&d.params, &d.models, &d.bufs, d.bandwidth, 100.0).unwrap();
        worst = worst.max(eq.residual);
        if eq.converged && eq.residual <= 1e-9 {
            solved += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        concave == DRAWS && solved == DRAWS && elapsed < BUDGET,
        format!("concave {concave}/{DRAWS}, solved {solved}/{DRAWS}, worst residual {worst:.1e}, {elapsed:.2?}"),
    );
}

fn criterion_02_closed_form_vs_solver() {
    const DRAWS: usize = 100;
    const BUDGET: Duration = Duration::from_secs(5);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let (mut gap, mut foc) = (0.0f64, 0.0f64);
    for _ in 0..DRAWS {
        let d = identical_pair(&mut rng);
        let z = foc_coefficients(&d.params, &d.models[0], &d.bufs[0], d.bandwidth).unwrap();
        let beta = d.models[0].beta;
        let r = closed_form_identical_2user(&z, beta);
        let r_max = 10.0 * r.max(1.0);
        let eq = solve_equilibrium(&d.params, &d.models, &d.bufs, d.bandwidth, r_max).unwrap();
        gap = gap.max((eq.rates[0] - r).abs()).max((eq.rates[1] - r).abs());
        let g = utility_gradient(&d.params, &d.models[0], 0, &[r, r], &d.bufs[0], d.bandwidth).unwrap();
        foc = foc.max(g.abs());
    }
    let elapsed = start.elapsed();
    report(
        2,
        gap <= 1e-6 && foc <= 1e-9 && elapsed < BUDGET,
        format!("max |closed form - solver| {gap:.1e} Mbps, max FOC residual {foc:.1e}, {elapsed:.2?}"),
    );
}

fn criterion_03_gradient_oracle() {
    const DRAWS: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let central = |d: &Draw, i: usize, rates: &[f64], h: f64| {
        let mut up = rates.to_vec();
        let mut dn = rates.to_vec();
        up[i] += h;
        dn[i] -= h;
        let u = |r: &[f64]| utility(&d.params, &d.models[i], i, r, &d.bufs[i], d.bandwidth).unwrap();
        (u(&up) - u(&dn)) / (2.0 * h)
    };
    let mut worst_rel = 0.0f64;
    for _ in 0..DRAWS {
        let n = rng.gen_range(1..=6);
        let d = draw(&mut rng, n);
        let rates: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
        let i = rng.gen_range(0..n);
        let g = utility_gradient(&d.params, &d.models[i], i, &rates, &d.bufs[i], d.bandwidth).unwrap();
        let fd = central(&d, i, &rates, 1e-4);
        worst_rel = worst_rel.max((g - fd).abs() / g.abs().max(1e-3));
    }

    // The order is measured where the truncation error dominates rounding at
    // h = 1e-4, i.e. where the quality curve has visible third derivative.
    let mut min_order = f64::INFINITY;
    for _ in 0..50 {
        let p = GameParams::new(0.003, rng.gen_range(0.01..0.1), 0.1, 2.0).unwrap();
        let m = VideoQualityModel::new(rng.gen_range(1.0..5.0), rng.gen_range(0.3..0.6), vec![1.0]).unwrap();
        let d = Draw {
            params: p,
            models: vec![m.clone(), m],
            bufs: vec![BufferView::at_reference(15.0); 2],
            bandwidth: 6.0,
        };
        let rates = [rng.gen_range(0.2..1.5), rng.gen_range(0.2..3.0)];
        let g = utility_gradient(&d.params, &d.models[0], 0, &rates, &d.bufs[0], d.bandwidth).unwrap();
        let e3 = (central(&d, 0, &rates, 1e-3) - g).abs();
        let e4 = (central(&d, 0, &rates, 1e-4) - g).abs();
        min_order = min_order.min((e3 / e4).log10());
    }
    report(
        3,
        worst_rel <= 1e-6 && min_order >= 1.9,
        format!("worst relative error at h=1e-4 {worst_rel:.1e}, min observed order {min_order:.3}"),
    );
}

fn criterion_04_stability_cross_oracle() {
    const DRAWS: usize = 100;
    const MARGIN: f64 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let (mut accepted, mut agree, mut stable_count) = (0, 0, 0);
    let mut worst_entry = 0.0f64;
    while accepted < DRAWS {
        let d = identical_pair(&mut rng);
        let d = Draw {
            bufs: vec![BufferView::at_reference(d.bufs[0].b_ref); 2],
            ..d
        };
        let z = foc_coefficients(&d.params, &d.models[0], &d.bufs[0], d.bandwidth).unwrap();
        let r = closed_form_identical_2user(&z, d.models[0].beta);
        let theta = rng.gen_range(0.1..200.0);
        let (cf, rep) =
            stability::stability_conditions_identical_2user(&d.params, &d.models[0], theta, r, d.bandwidth).unwrap();
        if (rep.spectral_radius - 1.0).abs() < MARGIN {
            continue;
        }
        accepted += 1;
        let spectral = rep.spectral_radius < 1.0;
        stable_count += spectral as usize;
        agree += (cf.stable() == spectral) as usize;
        let rates = [r, r];
        let thetas = [theta, theta];
        let a = stability::jacobian_2user(&d.params, &d.models, &d.bufs, d.bandwidth, &rates, &thetas).unwrap();
        let n = stability::jacobian_numeric(&d.params, &d.models, &d.bufs, d.bandwidth, &rates, &thetas).unwrap();
        worst_entry = worst_entry.max((a - n).abs().max());
    }
    report(
        4,
        agree == DRAWS && worst_entry <= 1e-6,
        format!(
            "verdicts agree {agree}/{DRAWS} ({stable_count} stable), max Jacobian entry gap {worst_entry:.1e}"
        ),
    );
}

struct LocalRun {
    radius: f64,
    start_dist: f64,
    end_dist: f64,
    observed_rate: f64,
}

fn local_run(d: &Draw, theta: f64, rng: &mut ChaCha8Rng, rounds: usize) -> Option<LocalRun> {
    let n = d.models.len();
    let eq = solve_equilibrium(&d.params, &d.models, &d.bufs, d.bandwidth, 1e3).ok()?;
    if !eq.converged || eq.rates.iter().any(|&r| r < 0.05 || r > 500.0) {
        return None;
    }
    let thetas = vec![theta; n];
    let rep = stability::analyze(&d.params, &d.models, &d.bufs, d.bandwidth, &eq.rates, &thetas).ok()?;
    let cfg = AdaptConfig {
        theta,
        r_min: 1e-6,
        r_max: 1e4,
        ..AdaptConfig::default()
    }
    .unclamped();
    let mut sessions: Vec<Session> = (0..n)
        .map(|i| {
            let mut s = Session::new(i, d.models[i].clone(), d.bufs[i], cfg);
            s.rate = eq.rates[i] * (1.0 + rng.gen_range(-0.01..0.01));
            s
        })
        .collect();
    let dist = |s: &[Session]| s.iter().zip(&eq.rates).map(|(s, r)| (s.rate - r).powi(2)).sum::<f64>().sqrt();
    let start_dist = dist(&sessions);
    let mut prev: Vec<f64> = sessions.iter().map(|s| s.rate).collect();
    let mut steps = Vec::new();
    for _ in 0..rounds {
        let next = adapt::round(&mut sessions, &d.params, d.bandwidth).ok()?;
        steps.push(next.iter().zip(&prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        prev = next;
    }
    // asymptotic rate: the second half of the steps still above the rounding floor
    let m = steps.iter().rposition(|&s| s > 1e-6 * steps[0]).unwrap_or(0).max(1).min(steps.len() - 1);
    let k0 = if m >= 8 { m / 2 } else { 0 };
    Some(LocalRun {
        radius: rep.spectral_radius,
        start_dist,
        end_dist: dist(&sessions),
        observed_rate: (steps[m] / steps[k0]).powf(1.0 / (m - k0) as f64),
    })
}

fn criterion_05_dynamics_spectrum_link() {
    const STABLE: usize = 50;
    const UNSTABLE: usize = 20;
    const BUDGET: Duration = Duration::from_secs(30);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let (mut stable_seen, mut stable_ok, mut unstable_seen, mut unstable_ok) = (0, 0, 0, 0);
    let mut worst_excess = f64::NEG_INFINITY;
    while stable_seen < STABLE || unstable_seen < UNSTABLE {
        let n = rng.gen_range(2..=4);
        let mut d = draw(&mut rng, n);
        for b in &mut d.bufs {
            *b = BufferView::new(b.b_curr, b.b_ref, 0.0).unwrap();
        }
        let theta = rng.gen_range(0.1..300.0);
        let mut probe = rng.clone();
        let Some(quick) = local_run(&d, theta, &mut probe, 1) else { continue };
        if quick.radius <= 0.95 && stable_seen < STABLE {
            let Some(run) = local_run(&d, theta, &mut rng, 2000) else { continue };
            stable_seen += 1;
            worst_excess = worst_excess.max(run.observed_rate - run.radius);
            // the server's finite difference moves the fixed point by O(eps^2)
            if run.end_dist <= 1e-5 * run.start_dist.max(1.0) && run.observed_rate <= run.radius + 0.05 {
                stable_ok += 1;
            }
        } else if quick.radius >= 1.05 && unstable_seen < UNSTABLE {
            let Some(run) = local_run(&d, theta, &mut rng, 50) else { continue };
            unstable_seen += 1;
            if run.end_dist > run.start_dist {
                unstable_ok += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        5,
        stable_ok == STABLE && unstable_ok == UNSTABLE && elapsed < BUDGET,
        format!(
            "stable converged {stable_ok}/{STABLE} (worst rate - radius {worst_excess:+.3}), \
             unstable diverged {unstable_ok}/{UNSTABLE}, {elapsed:.2?}"
        ),
    );
}

fn criterion_06_case1_convergence() {
    const TARGET: f64 = 3.0;
    const BAND: f64 = 0.15;
    // 23.99319263898335539767... from a 40-digit bisection of the first-order condition.
    const LITERAL_EQUILIBRIUM: f64 = 23.993192638983355;

    let literal = load_preset("case1-literal").unwrap();
    let p = literal.game_params().unwrap();
    let models = literal.models().unwrap();
    let bufs = vec![BufferView::at_reference(literal.users[0].b_ref); 2];
    let eq = solve_equilibrium(&p, &models, &bufs, 6.0, 100.0).unwrap();
    let literal_gap = (eq.rates[0] - LITERAL_EQUILIBRIUM).abs();
    println!("  literal constants: static equilibrium {:.6} Mbps (not 3)", eq.rates[0]);

    let s = load_preset("case1-fixed").unwrap();
    let b_ref = s.users[0].b_ref;
    let traces = run_scenario(&s).unwrap();
    let settled = settled_from(&traces, |t, k| (t.records[k].requested_rate - TARGET).abs() <= BAND);
    let (lo, hi) = (b_ref - 3.0, b_ref + 8.0);
    let buffers_ok = settled.is_some_and(|k0| {
        traces.iter().all(|t| t.records[k0..].iter().all(|r| r.buffer >= lo && r.buffer <= hi))
    });
    let stall_total = stalls(&traces);
    let tail: Vec<f64> = traces.iter().map(|t| t.records.last().unwrap().requested_rate).collect();
    report(
        6,
        literal_gap <= 1e-6 && settled.is_some_and(|k| k < 150) && buffers_ok && stall_total == 0,
        format!(
            "literal equilibrium gap {literal_gap:.1e}; settled at segment {settled:?}, final rates {tail:.3?}, \
             buffers in [{lo}, {hi}] {buffers_ok}, stalls {stall_total}"
        ),
    );
}

fn criterion_07_case3_fairness() {
    const CAP: f64 = 1.5;
    const BAND: f64 = 0.1;
    const BUDGET: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for kind in ["fixed", "persistent", "staged", "short_term"] {
        let mut s = load_preset("case3").unwrap();
        set_profile(&mut s, kind).unwrap();
        let traces = run_scenario(&s).unwrap();
        let settled = settled_from(&traces, |t, k| (t.records[k].requested_rate - CAP).abs() <= BAND);
        let st = stalls(&traces);
        let finals: Vec<f64> = traces.iter().map(|t| t.records.last().unwrap().requested_rate).collect();
        ok &= settled.is_some() && st == 0;
        details.push(format!("{kind}: settled {settled:?} final {finals:.2?} stalls {st}"));
    }
    let elapsed = start.elapsed();
    report(7, ok && elapsed < BUDGET, format!("{}; {elapsed:.2?}", details.join("; ")));
}

fn criterion_08_bandwidth_tracking() {
    const WINDOW: f64 = 30.0;
    const BAND: f64 = 0.25;
    let s = load_preset("case2-persistent").unwrap();
    let profile = s.server.profile().unwrap();
    let traces = run_scenario(&s).unwrap();
    let end = traces.iter().map(|t| t.records.last().unwrap().t_end).fold(f64::INFINITY, f64::min);
    let mut ok = true;
    let mut checked = 0;
    let mut details = Vec::new();
    for t in profile.change_times() {
        let (before, after) = (profile.at(t - 1e-9), profile.at(t));
        let target = match (before, after) {
            (b, a) if b == 6.0 && a == 9.0 => 4.5,
            (b, a) if b == 9.0 && a == 6.0 => 3.0,
            _ => continue,
        };
        if t + WINDOW >= end {
            continue;
        }
        checked += 1;
        let rates: Vec<f64> = traces.iter().map(|tr| tr.rate_at(t + WINDOW).unwrap_or(f64::NAN)).collect();
        let hit = rates.iter().all(|r| (r - target).abs() <= BAND);
        ok &= hit;
        details.push(format!("{before}->{after} at {t}s: rates {rates:.2?} vs {target}"));
    }
    report(8, ok && checked >= 2, details.join("; "));
}

fn criterion_09_learning_rate_trends() {
    let thetas = [50.0, 100.0, 150.0, 200.0];
    let mut switches = Vec::new();
    let mut rates = Vec::new();
    for &theta in &thetas {
        let mut s = load_preset("case1-fixed").unwrap();
        s.sim.quantize = true;
        s.set_theta(theta);
        let traces = run_scenario(&s).unwrap();
        let stats: Vec<_> = traces.iter().map(|t| summarize(t, SwitchMode::Quantized).unwrap()).collect();
        let n = stats.len() as f64;
        switches.push(stats.iter().map(|s| s.switch_count as f64).sum::<f64>() / n);
        rates.push(stats.iter().map(|s| s.avg_rate).sum::<f64>() / n);
    }
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / lo;
    report(
        9,
        switches[3] > switches[2] && switches[2] >= switches[1] && spread <= 0.05,
        format!("mean switches per user {switches:?} for theta {thetas:?}, avg rates {rates:.3?}, spread {spread:.3}"),
    );
}

fn criterion_10_metric_exactness() {
    let p = QoeMetricParams::default();
    let s = |r: f64, q: f64, t_down: f64, b: f64| QoeSample { r, q, t_down, b };
    // 3 + 2.5 + 1 - (0.5 + 1.5) - 6 * (2.5 - 1.0)
    let q1 = qoe1_samples(&[s(3.0, 0.0, 1.0, 4.0), s(2.5, 0.0, 2.5, 1.0), s(1.0, 0.0, 1.0, 3.0)], &p).unwrap();
    // 0.9 + 0.6 - 2 * 0.3 - 0.001 * (15 - 10)^2 - 2 * (3 - 2)
    let q2 = qoe2_samples(&[s(0.0, 0.9, 3.0, 2.0), s(0.0, 0.6, 1.0, 10.0)], &p).unwrap();
    let e1 = (q1 - -4.5).abs();
    let e2 = (q2 - -1.125).abs();
    let defaults = (p.xi, p.psi, p.phi, p.sigma, p.eta, p.b_ref) == (1.0, 6.0, 2.0, 0.001, 2.0, 15.0);
    report(
        10,
        e1 <= 1e-12 && e2 <= 1e-12 && defaults,
        format!("qoe1 error {e1:.1e}, qoe2 error {e2:.1e}, default weights shipped {defaults}"),
    );
}

fn criterion_11_baseline_ordering() {
    let base = load_preset("case4-fixed").unwrap();
    let run = |policy: PolicyKind| {
        let mut s: Scenario = base.clone();
        s.set_policy(policy);
        let traces = run_scenario(&s).unwrap();
        let stats: Vec<_> = traces.iter().map(|t| summarize(t, SwitchMode::Quantized).unwrap()).collect();
        let n = stats.len() as f64;
        (
            stats.iter().map(|s| s.switch_count as f64).sum::<f64>() / n,
            stats.iter().map(|s| s.rate_stddev).sum::<f64>() / n,
            stalls(&traces),
        )
    };
    let game = run(PolicyKind::Game);
    let bf = run(PolicyKind::Bf);
    let qf = run(PolicyKind::Qf);
    report(
        11,
        game.0 < bf.0 && game.1 < bf.1 && game.2 == 0 && qf.2 >= 1,
        format!(
            "(switches, rate stddev, stalls) game {game:.3?} bf {bf:.3?} qf {qf:.3?} (seed {})",
            base.sim.seed
        ),
    );
}

fn criterion_12_determinism() {
    let mut differing = Vec::new();
    for name in preset_names() {
        let s = load_preset(name).unwrap();
        let a: Vec<String> = run_scenario(&s).unwrap().iter().map(|t| t.to_csv_string().unwrap()).collect();
        let b: Vec<String> = run_scenario(&s).unwrap().iter().map(|t| t.to_csv_string().unwrap()).collect();
        if a != b {
            differing.push(name);
        }
    }
    report(
        12,
        differing.is_empty(),
        format!("{} presets re-run, differing: {differing:?}", preset_names().len()),
    );
}

fn main() {
    let checks: [(&str, fn()); 12] = [
        ("criterion_01_concavity_and_existence", criterion_01_concavity_and_existence),
        ("criterion_02_closed_form_vs_solver", criterion_02_closed_form_vs_solver),
        ("criterion_03_gradient_oracle", criterion_03_gradient_oracle),
        ("criterion_04_stability_cross_oracle", criterion_04_stability_cross_oracle),
        ("criterion_05_dynamics_spectrum_link", criterion_05_dynamics_spectrum_link),
        ("criterion_06_case1_convergence", criterion_06_case1_convergence),
        ("criterion_07_case3_fairness", criterion_07_case3_fairness),
        ("criterion_08_bandwidth_tracking", criterion_08_bandwidth_tracking),
        ("criterion_09_learning_rate_trends", criterion_09_learning_rate_trends),
        ("criterion_10_metric_exactness", criterion_10_metric_exactness),
        ("criterion_11_baseline_ordering", criterion_11_baseline_ordering),
        ("criterion_12_determinism", criterion_12_determinism),
    ];
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, check)| std::panic::catch_unwind(*check).is_err())
        .map(|(name, _)| *name)
        .collect();
    println!("{} of {} criteria passed", checks.len() - failed.len(), checks.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
