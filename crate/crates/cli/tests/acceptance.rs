//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Tolerances are pinned as constants below.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use perceptlab_core::denoiser::{
    gaussian_posterior_eps, gmm_posterior_eps, DenoiserBackend, GaussianPrior, GmmComponent, GmmPrior, NoiseModel,
    PriorField, UnsharpParams,
};
use perceptlab_core::evalreport::{
    emit_psych_summary, run_replication, summarize_psychophysics, ReportFormat, PSYCH_STATS_HEADER,
};
use perceptlab_core::guidance::{
    compute_loss, gamma_sweep, generate_with_guidance, loss_gradient, target_means, GuidanceConfig, PerceptNorm,
    Target, TargetRect, TargetSource,
};
use perceptlab_core::imagecore::{Domain, ImageGrid, RegionMask};
use perceptlab_core::perception::{
    alignment_check, delta_intensity, perception_accuracy_score, region_mean_intensity, AlignmentResult,
};
use perceptlab_core::schedule::{make_schedule, run_trajectory, Direction, NoiseSchedule, ScheduleParams};
use perceptlab_core::stimuli::{gen_stimulus, Expected, StimulusSpec};
use perceptlab_core::study::{
    trial_order, Judgment, Response, SessionRecord, SessionStatus, StudyEntry, StudyLabel, StudySet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INVERSE_TOL: f64 = 1e-9;
const INVERSE_BUDGET: Duration = Duration::from_secs(1);
const ORACLE_TOL: f64 = 1e-6;
const FD_H: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-5;
const GRADIENT_CONFIGS: usize = 120;
const METRIC_MEAN_TOL: f64 = 1e-12;
const METRIC_CASES: usize = 1200;
const REPLICATION_BUDGET: Duration = Duration::from_secs(30);
const CONVERGENCE_TOL: f64 = 0.05;
/// Sampling steps for the guidance fixtures.
const GUIDANCE_N_INFERENCE: usize = 200;

type Check = Result<String, String>;

fn random_image(r: &mut ChaCha8Rng, h: usize, w: usize, c: usize, domain: Domain) -> ImageGrid {
    let (lo, hi) = match domain {
        Domain::Display01 => (0.0, 1.0),
        Domain::Model11 => (-1.0, 1.0),
    };
    let data = (0..h * w * c).map(|_| r.random_range(lo..hi)).collect();
    ImageGrid::new(h, w, c, data, domain).unwrap()
}

fn random_mask(r: &mut ChaCha8Rng, id: &str, h: usize, w: usize) -> RegionMask {
    loop {
        let bits: Vec<bool> = (0..h * w).map(|_| r.random_bool(0.3)).collect();
        if bits.iter().any(|b| *b) {
            return RegionMask::new(id, h, w, bits).unwrap();
        }
    }
}

// ---------------------------------------------------------------------------

fn ddim_mutual_inverse() -> Check {
    let start = Instant::now();
    let sched = make_schedule(1000, 1e-4, 0.02, 50).map_err(|e| e.to_string())?;
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for value in [0.0, 0.37, -1.3] {
        let model = NoiseModel::Constant { value };
        for k in [1, 5, 10] {
            let x = random_image(&mut r, 64, 64, 1, Domain::Model11);
            let up = run_trajectory(&x, &sched, &model, Direction::Invert, k, false).map_err(|e| e.to_string())?;
            let down = run_trajectory(&up.endpoint().z, &sched, &model, Direction::Sample, k, false)
                .map_err(|e| e.to_string())?;
            let err = x
                .data()
                .iter()
                .zip(down.endpoint().z.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(err);
            runs += 1;
        }
    }
    let elapsed = start.elapsed();
    let detail = format!("{runs} runs, max abs error {worst:.3e}, {elapsed:.2?}");
    if worst < INVERSE_TOL && elapsed < INVERSE_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Composite Simpson rule for `E[x | z]` under a scalar prior density and
/// likelihood `N(z; sqrt(a) x, 1 - a)`.
fn quadrature_posterior_mean(prior: &dyn Fn(f64) -> f64, lo: f64, hi: f64, a: f64, z: f64) -> f64 {
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = w * prior(x) * normal_pdf(z, a.sqrt() * x, 1.0 - a);
        num += x * p;
        den += p;
    }
    num / den
}

fn denoiser_oracle() -> Check {
    // alpha_bar = 0.9, 0.5, 0.1 at t = 1, 2, 3.
    let sched = NoiseSchedule::from_betas(vec![0.1, 1.0 - 0.5 / 0.9, 0.8], 3).map_err(|e| e.to_string())?;
    let probes: Vec<f64> = (0..25).map(|i| -2.4 + 0.2 * i as f64).collect();
    let z = ImageGrid::new(1, probes.len(), 1, probes.clone(), Domain::Model11).unwrap();

    let (mu, var) = (0.1, 0.3);
    let gauss = GaussianPrior::new(PriorField::Scalar(mu), PriorField::Scalar(var)).unwrap();
    let comps = vec![
        GmmComponent::new(0.3, -0.6, 0.05),
        GmmComponent::new(0.5, 0.2, 0.1),
        GmmComponent::new(0.2, 0.7, 0.02),
    ];
    let gmm = GmmPrior::new(comps.clone()).unwrap();
    let gauss_pdf = move |x: f64| normal_pdf(x, mu, var);
    let gmm_pdf = move |x: f64| comps.iter().map(|c| c.weight * normal_pdf(x, c.mean, c.variance)).sum::<f64>();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for t in 1..=3 {
        let a = sched.alpha_bar(t).unwrap();
        let eps_g = gaussian_posterior_eps(&gauss, &z, t, &sched).map_err(|e| e.to_string())?;
        let eps_m = gmm_posterior_eps(&gmm, &z, t, &sched).map_err(|e| e.to_string())?;
        for (i, &zv) in probes.iter().enumerate() {
            for (eps, pdf) in [(&eps_g, &gauss_pdf as &dyn Fn(f64) -> f64), (&eps_m, &gmm_pdf)] {
                let x0 = quadrature_posterior_mean(pdf, -6.0, 6.0, a, zv);
                let want = (zv - a.sqrt() * x0) / (1.0 - a).sqrt();
                worst = worst.max((eps.data()[i] - want).abs());
                checked += 1;
            }
        }
    }
    let detail = format!("{checked} probes over alpha_bar 0.9/0.5/0.1, max error {worst:.3e}");
    if worst < ORACLE_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn random_targets(r: &mut ChaCha8Rng, h: usize, w: usize, ch: usize) -> Vec<Target> {
    // Disjoint rectangles stacked in separate row bands.
    let n = r.random_range(1..=3);
    let band = h / n;
    (0..n)
        .map(|i| {
            let th = r.random_range(1..=band.min(4));
            let tw = r.random_range(1..=w.min(4));
            let y = i * band + r.random_range(0..=band - th);
            let x = r.random_range(0..=w - tw);
            let region = RegionMask::rect(format!("t{i}"), h, w, y, x, th, tw).unwrap();
            let source = if r.random_bool(0.5) {
                TargetSource::Flat((0..ch).map(|_| r.random_range(-1.0..1.0)).collect())
            } else {
                TargetSource::Field((0..th * tw * ch).map(|_| r.random_range(-1.0..1.0)).collect())
            };
            Target {
                region,
                source,
                desired: (0..ch).map(|_| r.random_range(-1.0..1.0)).collect(),
            }
        })
        .collect()
}

fn gradient_check() -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut configs = 0;
    let mut worst: f64 = 0.0;
    let mut nonzero_outside = 0;
    while configs < GRADIENT_CONFIGS {
        let (h, w) = (r.random_range(4..10), r.random_range(4..10));
        let ch = if r.random_bool(0.5) { 1 } else { 3 };
        let targets = random_targets(&mut r, h, w, ch);
        let z = random_image(&mut r, h, w, ch, Domain::Model11);
        let (gamma, beta) = (r.random_range(0.0..2.0), r.random_range(0.0..2.0));
        let norm = if r.random_bool(0.5) { PerceptNorm::Abs } else { PerceptNorm::Square };
        // Stay clear of the kink: a probe moves a region mean by h / M.
        let means = target_means(&z, &targets).unwrap();
        let near_kink = targets
            .iter()
            .zip(&means)
            .any(|(t, m)| m.iter().zip(&t.desired).any(|(m, k)| (m - k).abs() < 1e-3));
        if near_kink {
            continue;
        }
        configs += 1;
        let loss = |v: &[f64]| compute_loss(&z.with_data(v.to_vec()).unwrap(), &targets, gamma, beta, norm).unwrap().total;
        let g = loss_gradient(&z, &targets, gamma, beta, norm).unwrap();
        let inside: Vec<bool> = {
            let mut m = vec![false; h * w];
            for t in &targets {
                for p in t.region.indices() {
                    m[p] = true;
                }
            }
            m
        };
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..z.data().len() {
            if !inside[i / ch] {
                if g.data()[i] != 0.0 {
                    nonzero_outside += 1;
                }
                continue;
            }
            let mut v = z.data().to_vec();
            v[i] += FD_H;
            let up = loss(&v);
            v[i] -= 2.0 * FD_H;
            let down = loss(&v);
            let fd = (up - down) / (2.0 * FD_H);
            num = num.max((g.data()[i] - fd).abs());
            den = den.max(fd.abs());
        }
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    let detail = format!("{configs} configs, max relative error {worst:.3e}, {nonzero_outside} non-zero entries outside targets");
    if worst < FD_REL_TOL && nonzero_outside == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn brute_mean(img: &ImageGrid, mask: &RegionMask, c: usize) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if mask.contains(y, x) {
                s += img.get(y, x, c);
                n += 1;
            }
        }
    }
    s / n as f64
}

fn metric_oracle() -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut mean_err: f64 = 0.0;
    let mut count_mismatch = 0;
    let mut images: Vec<Vec<AlignmentResult>> = Vec::new();
    let mut brute_hits = 0usize;
    for case in 0..METRIC_CASES {
        let (h, w) = (r.random_range(2..12), r.random_range(2..12));
        let ch = if r.random_bool(0.5) { 1 } else { 3 };
        let input = random_image(&mut r, h, w, ch, Domain::Display01);
        let output = random_image(&mut r, h, w, ch, Domain::Display01);
        let mask = random_mask(&mut r, "r", h, w);
        let tau = r.random_range(0.5..=1.0);
        let expected = if r.random_bool(0.5) { Expected::Darker } else { Expected::Lighter };

        let m = region_mean_intensity(&input, &mask).unwrap();
        let d = delta_intensity(&input, &output, &mask).unwrap();
        let a = alignment_check(&input, &output, &mask, tau, expected).unwrap();
        let (mut lin, mut lout) = (0.0, 0.0);
        for c in 0..ch {
            let bi = brute_mean(&input, &mask, c);
            let bo = brute_mean(&output, &mask, c);
            let mut dsum = 0.0;
            let mut n = 0;
            for y in 0..h {
                for x in 0..w {
                    if mask.contains(y, x) {
                        dsum += (output.get(y, x, c) - input.get(y, x, c)).abs();
                        n += 1;
                    }
                }
            }
            mean_err = mean_err
                .max((m.means[c] - bi).abs())
                .max((d[c] - dsum / n as f64).abs())
                .max((a.out_mean[c] - bo).abs());
            lin += bi / ch as f64;
            lout += bo / ch as f64;
        }
        let want = match expected {
            Expected::Darker => lout < tau * lin,
            _ => lout > lin / tau,
        };
        if want != a.aligned {
            count_mismatch += 1;
        }
        // Group cases into images of 1..=3 regions for PAS.
        if case % 3 == 0 {
            images.push(vec![]);
        }
        images.last_mut().unwrap().push(a);
    }
    for img in &images {
        if img.iter().all(|a| a.aligned) {
            brute_hits += 1;
        }
    }
    let pas = perception_accuracy_score(&images).unwrap();
    let pas_ok = pas == 100.0 * brute_hits as f64 / images.len() as f64;
    let detail = format!(
        "{METRIC_CASES} cases, max mean error {mean_err:.3e}, {count_mismatch} alignment mismatches, PAS {pas:.4} ({brute_hits}/{})",
        images.len()
    );
    if mean_err <= METRIC_MEAN_TOL && count_mismatch == 0 && pas_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn replication_fixture() -> Check {
    let start = Instant::now();
    let stimuli: Vec<_> = (0..50)
        .map(|seed| gen_stimulus(&StimulusSpec::randomized("simultaneous_contrast", 64, seed, false).unwrap()).unwrap())
        .collect();
    let model = NoiseModel::UnsharpRef(UnsharpParams::default());
    let report = run_replication("sc50", &stimuli, &ScheduleParams::default(), "unsharp_ref", &model, 5, &[1.0])
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let pas = report.pas[0].pas.unwrap_or(f64::NAN);
    let matches = report
        .stimuli
        .iter()
        .flat_map(|s| &s.pairs)
        .filter(|p| p.expected == Some(p.observed))
        .count();
    let detail = format!("PAS(tau=1.0) {pas:.2}, direction matches {matches}/50, {elapsed:.2?}");
    if pas == 100.0 && matches == 50 && report.failures.is_empty() && elapsed < REPLICATION_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn gaussian_backend() -> DenoiserBackend {
    DenoiserBackend::new("gaussian", NoiseModel::Gaussian(GaussianPrior::scalar(0.0, 0.25).unwrap()))
}

fn guidance_schedule() -> NoiseSchedule {
    make_schedule(1000, 1e-4, 0.02, GUIDANCE_N_INFERENCE).unwrap()
}

fn guidance_convergence() -> Check {
    let sched = guidance_schedule();
    let backend = gaussian_backend();
    let mut within = 0;
    let mut decreasing = 0;
    let mut errors = Vec::new();
    for seed in 0..10 {
        let cfg = GuidanceConfig {
            seed,
            ..GuidanceConfig::default()
        };
        let out = generate_with_guidance(&sched, &backend, &cfg, false).map_err(|e| e.to_string())?;
        let targets = cfg.build_targets().unwrap();
        let means = target_means(&out.latent, &targets).unwrap();
        let err = targets
            .iter()
            .zip(&means)
            .flat_map(|(t, m)| m.iter().zip(&t.desired).map(|(m, k)| (m - k).abs()))
            .fold(0.0, f64::max);
        if err <= CONVERGENCE_TOL {
            within += 1;
        }
        if out.trace.last().unwrap().total < out.trace.first().unwrap().total {
            decreasing += 1;
        }
        errors.push(format!("{err:.3}"));
    }
    let detail = format!(
        "{within}/10 seeds within {CONVERGENCE_TOL}, trace decreasing on {decreasing}/10 (errors {})",
        errors.join(" ")
    );
    if within >= 9 && decreasing == 10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gamma_sweep_monotone() -> Check {
    let sched = guidance_schedule();
    let mut cfg = GuidanceConfig::default();
    for (t, k) in cfg.targets.iter_mut().zip([-0.5, 0.5]) {
        *t = TargetRect { desired: vec![k], ..t.clone() };
    }
    let gammas = [0.0, 0.25, 0.5, 1.0];
    let outs = gamma_sweep(&sched, &gaussian_backend(), &cfg, &gammas).map_err(|e| e.to_string())?;
    let vi: Vec<f64> = outs.iter().map(|o| o.final_loss.vi).collect();
    let detail = format!("L_vi over gamma {gammas:?}: {vi:.4?}");
    if vi.windows(2).all(|w| w[1] <= w[0]) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                if rel != perceptlab_cli::MANIFEST_FILE {
                    acc.insert(rel, fs::read(&p).unwrap());
                }
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

fn cli(args: &[&str]) -> i32 {
    perceptlab_cli::run_args(std::iter::once("perceptlab").chain(args.iter().copied()))
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| -> PathBuf { tmp.path().join(s) };
    let s = |p: &PathBuf| p.to_string_lossy().into_owned();
    let setup = [
        cli(&["make-stimuli", "--count", "12", "--seed", "5", "--out", &s(&p("stim"))]),
        cli(&["fit-denoiser", "--kind", "unsharp", "--out", &s(&p("unsharp"))]),
        cli(&["fit-denoiser", "--kind", "gaussian", "--out", &s(&p("gauss"))]),
    ];
    if setup.iter().any(|c| *c != 0) {
        return Err(format!("setup exit codes {setup:?}"));
    }
    let stimuli = s(&p("stim/stimuli.json"));
    let unsharp = s(&p("unsharp/backend.json"));
    let gauss = s(&p("gauss/backend.json"));
    let mut compared = 0;
    for (name, args) in [
        ("rep", vec!["replicate", "--stimuli", &stimuli, "--backend", &unsharp, "--profiles"]),
        ("gen", vec!["generate", "--backend", &gauss, "--gamma", "0,0.5", "--seed", "3"]),
    ] {
        let (a, b, c) = (p(&format!("{name}_a")), p(&format!("{name}_b")), p(&format!("{name}_c")));
        for dir in [&a, &b] {
            let mut full = args.clone();
            let out = s(dir);
            full.extend(["--out", &out]);
            let code = cli(&full);
            if code != 0 {
                return Err(format!("{name} exited {code}"));
            }
        }
        let manifest = s(&a.join(perceptlab_cli::MANIFEST_FILE));
        let code = cli(&["rerun", "--manifest", &manifest, "--out", &s(&c)]);
        if code != 0 {
            return Err(format!("{name} rerun exited {code}"));
        }
        let (ta, tb, tc) = (read_tree(&a), read_tree(&b), read_tree(&c));
        if ta.is_empty() || ta != tb || ta != tc {
            return Err(format!("{name}: outputs differ between runs"));
        }
        compared += ta.len();
    }
    Ok(format!("{compared} output files byte-identical across reruns and manifest replays"))
}

// ---------------------------------------------------------------------------

fn psych_stats() -> Check {
    let set = StudySet {
        id: "s".into(),
        stimuli: (0..20)
            .map(|i| StudyEntry {
                image: format!("{i}.png"),
                label: if i < 10 { StudyLabel::Illusion } else { StudyLabel::Control },
            })
            .collect(),
    };
    // Observer `o` says "different" on the first `ill` illusion and first
    // `ctl` control stimuli: rates 50/60/70 and 10/20/30.
    let sessions: Vec<SessionRecord> = [(5, 1), (6, 2), (7, 3)]
        .iter()
        .enumerate()
        .map(|(o, &(ill, ctl))| {
            let order = trial_order(20, o as u64);
            let responses = order
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let different = if s < 10 { s < ill } else { s - 10 < ctl };
                    Response {
                        trial_index: i,
                        judgment: if different { Judgment::Different } else { Judgment::Same },
                        rt_ms: 400,
                        timestamp_ms: 0,
                    }
                })
                .collect();
            SessionRecord {
                id: format!("sess{o}"),
                observer: format!("obs{o}"),
                set: "s".into(),
                seed: o as u64,
                order,
                responses,
                status: SessionStatus::Complete,
            }
        })
        .collect();
    let summary = summarize_psychophysics(&sessions, &[set]).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    emit_psych_summary(&summary, &[ReportFormat::Csv], tmp.path()).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(tmp.path().join("psych_summary.csv")).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let want_header = PSYCH_STATS_HEADER.to_vec();
    let want_row = ["3", "60.000000", "60.000000", "10.000000", "20.000000", "20.000000", "10.000000"];
    let detail = format!("{}", row.join(","));
    let six = ["illusion_mean", "illusion_median", "illusion_std", "control_mean", "control_median", "control_std"]
        .iter()
        .all(|h| header.contains(h));
    if header == want_header && row == want_row && six {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn main() {
    let checks: [(&str, fn() -> Check); 9] = [
        ("ddim mutual inverse (constant eps, k = 1/5/10, 64x64)", ddim_mutual_inverse),
        ("denoiser posterior vs quadrature oracle", denoiser_oracle),
        ("loss gradient vs central differences", gradient_check),
        ("metric oracle equivalence", metric_oracle),
        ("unsharp replication fixture (50 simultaneous-contrast stimuli, 5 steps)", replication_fixture),
        ("guidance convergence fixture (gaussian backend, defaults)", guidance_convergence),
        ("gamma sweep monotonicity", gamma_sweep_monotone),
        ("replicate/generate determinism", determinism),
        ("psychophysics statistics", psych_stats),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
