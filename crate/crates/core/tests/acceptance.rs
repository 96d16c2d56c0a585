//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p oodkit --test acceptance -- --nocapture`.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use oodkit::data::{gen_synthetic, SynthConfig};
use oodkit::encoder::{init_params, EncoderParams, UpstreamGrad};
use oodkit::harness::{novel_class_trial, run_benchmark, DataSource, PreparedData, RunConfig};
use oodkit::linalg::Matrix;
use oodkit::losses::{
    adaptive_margin, cross_entropy, margin_loss, scl_loss, DistanceMetric, LossMode, MarginGrad,
};
use oodkit::metrics::{auroc, far95};
use oodkit::rng::SplitMix64;
use oodkit::scorers::{
    fit_maha, score_maha, DetectorArtifact, FitOptions, ScorerKind,
};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<Outcome>, name: &'static str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    results.push(Outcome { name, pass, detail });
}

// ---------------------------------------------------------------- gradients

#[derive(Clone, Copy, Debug)]
enum Objective {
    Ce,
    Scl,
    Margin(DistanceMetric),
}

const TAU: f64 = 0.3;
const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-6;

fn batch_objective(
    params: &EncoderParams,
    xs: &[Vec<f64>],
    labels: &[usize],
    obj: Objective,
) -> (f64, Vec<UpstreamGrad>) {
    let recs: Vec<_> = xs.iter().map(|x| params.forward(x).unwrap()).collect();
    let m = recs.len();
    let mut up = vec![UpstreamGrad::default(); m];
    let loss = match obj {
        Objective::Ce => {
            let logits: Vec<Vec<f64>> = recs.iter().map(|r| r.logits.clone()).collect();
            let (l, g) = cross_entropy(&logits, labels).unwrap();
            for (u, g) in up.iter_mut().zip(g) {
                u.logits = g;
            }
            l
        }
        Objective::Scl => {
            let z: Vec<Vec<f64>> = recs.iter().map(|r| r.z.clone()).collect();
            let (l, g) = scl_loss(&z, labels, TAU).unwrap();
            for (u, g) in up.iter_mut().zip(g) {
                u.z = g;
            }
            l
        }
        Objective::Margin(metric) => {
            let h: Vec<Vec<f64>> = recs.iter().map(|r| r.h.clone()).collect();
            let (l, g) = margin_loss(&h, labels, metric, MarginGrad::Through).unwrap();
            for (u, g) in up.iter_mut().zip(g) {
                u.h = g;
            }
            l
        }
    };
    (loss, up)
}

/// True when a finite-difference probe could cross a non-differentiable point
/// of the margin loss: a hinge at zero, a tie for the margin pair, or an L1
/// coordinate at zero.
fn margin_near_kink(h: &[Vec<f64>], labels: &[usize], metric: DistanceMetric) -> bool {
    let tol = 1e-4;
    let xi = adaptive_margin(h, labels, metric).unwrap_or(0.0);
    let mut pos = Vec::new();
    for i in 0..h.len() {
        for a in 0..h.len() {
            if a == i {
                continue;
            }
            if metric == DistanceMetric::L1 && h[i].iter().zip(&h[a]).any(|(x, y)| (x - y).abs() < tol) {
                return true;
            }
            let d = metric.distance(&h[i], &h[a]);
            if labels[a] == labels[i] {
                pos.push(d);
            } else if (xi - d).abs() < tol {
                return true;
            }
        }
    }
    pos.sort_by(f64::total_cmp);
    pos.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    pos.len() >= 2 && pos[pos.len() - 1] - pos[pos.len() - 2] < tol
}

fn gradient_suite(results: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut rng = SplitMix64::new(20_251);
    let objectives = [
        Objective::Ce,
        Objective::Scl,
        Objective::Margin(DistanceMetric::L2),
        Objective::Margin(DistanceMetric::L1),
        Objective::Margin(DistanceMetric::Cosine),
    ];
    let mut instances = 0;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut skipped = 0;
    while instances < 24 {
        let input = 2 + rng.below(5);
        let hidden = 2 + rng.below(6);
        let d = 2 + rng.below(7); // ≤ 8
        let c = 2 + rng.below(3);
        let m = 3 + rng.below(4); // ≤ 6
        let params = init_params(input, &[hidden], d, c, rng.next_u64()).unwrap();
        let xs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..input).map(|_| rng.normal()).collect())
            .collect();
        // two guaranteed positive pairs, rest random
        let mut labels: Vec<usize> = (0..m).map(|_| rng.below(c)).collect();
        labels[1] = labels[0];
        if labels.iter().all(|&l| l == labels[0]) {
            labels[m - 1] = (labels[0] + 1) % c;
        }
        let h: Vec<Vec<f64>> = xs.iter().map(|x| params.forward(x).unwrap().h).collect();
        let kinky = objectives.iter().any(|o| match o {
            Objective::Margin(metric) => margin_near_kink(&h, &labels, *metric),
            _ => false,
        });
        if kinky {
            skipped += 1;
            continue;
        }
        instances += 1;
        for obj in objectives {
            let (_, up) = batch_objective(&params, &xs, &labels, obj);
            let recs: Vec<_> = xs.iter().map(|x| params.forward(x).unwrap()).collect();
            let analytic = params.backward(&recs, &up).unwrap();
            let flat_a: Vec<f64> = analytic.tensors().concat();
            let mut probe = params.clone();
            let n = flat_a.len();
            for idx in 0..n {
                let set = |p: &mut EncoderParams, v: f64| {
                    let mut k = idx;
                    for t in p.tensors_mut() {
                        if k < t.len() {
                            t[k] = v;
                            return;
                        }
                        k -= t.len();
                    }
                };
                let orig = params.tensors().concat()[idx];
                set(&mut probe, orig + FD_STEP);
                let (lp, _) = batch_objective(&probe, &xs, &labels, obj);
                set(&mut probe, orig - FD_STEP);
                let (lm, _) = batch_objective(&probe, &xs, &labels, obj);
                set(&mut probe, orig);
                let numeric = (lp - lm) / (2.0 * FD_STEP);
                let a = flat_a[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
                if rel > worst {
                    worst = rel;
                    worst_at = format!("{obj:?} instance {instances} param {idx}");
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        results,
        "gradient suite",
        worst < 1e-4 && secs < 30.0,
        format!(
            "{instances} instances x 5 objectives (ce, scl tau=0.3, margin l2/l1/cosine), \
             max rel err {worst:.2e} at {worst_at} (limit 1e-4), {skipped} kink draws redrawn, {secs:.1}s (limit 30s)"
        ),
    );
}

// ------------------------------------------------------------ Mahalanobis

/// Brute-force detector: per-class sums, outer-product covariance, eigen
/// pseudo-inverse via nalgebra, explicit quadratic forms.
fn brute_maha(x: &[Vec<f64>], y: &[usize], c: usize, q: &[f64]) -> f64 {
    let d = x[0].len();
    let mut means = vec![vec![0.0; d]; c];
    let mut counts = vec![0usize; c];
    for (v, &l) in x.iter().zip(y) {
        counts[l] += 1;
        for k in 0..d {
            means[l][k] += v[k];
        }
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= n as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (v, &l) in x.iter().zip(y) {
        let diff = DMatrix::from_fn(d, 1, |r, _| v[r] - means[l][r]);
        cov += &diff * diff.transpose();
    }
    cov /= x.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut pinv = DMatrix::<f64>::zeros(d, d);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > 1e-10 * lmax {
            let v = eig.eigenvectors.column(i);
            pinv += (v * v.transpose()) / lam;
        }
    }
    let mut best = f64::INFINITY;
    for m in &means {
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                s += (q[a] - m[a]) * pinv[(a, b)] * (q[b] - m[b]);
            }
        }
        best = best.min(s);
    }
    best.max(0.0)
}

fn maha_oracle(results: &mut Vec<Outcome>) {
    let mut rng = SplitMix64::new(777);
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut deficient = 0;
    let instances = 60;
    for inst in 0..instances {
        let d = 1 + rng.below(5);
        let c = 1 + rng.below(4);
        let n = (2 * c + rng.below(51 - 2 * c)).min(50);
        let mut y: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.below(c) }).collect();
        rng.shuffle(&mut y);
        let scales: Vec<f64> = (0..d).map(|_| rng.uniform(0.3, 3.0)).collect();
        let mut x: Vec<Vec<f64>> = y
            .iter()
            .map(|&l| {
                (0..d)
                    .map(|k| scales[k] * rng.normal() + 2.0 * (l * (k + 1)) as f64)
                    .collect()
            })
            .collect();
        if inst % 4 == 3 && d >= 3 {
            // exact linear dependency: rank-deficient covariance
            deficient += 1;
            for v in x.iter_mut() {
                v[d - 1] = v[0] - 0.5 * v[1];
            }
        }
        let det = fit_maha(&x, &y, c).unwrap();
        for _ in 0..5 {
            let q: Vec<f64> = (0..d).map(|_| 4.0 * rng.normal()).collect();
            let got = score_maha(&det, &q).unwrap();
            let want = brute_maha(&x, &y, c, &q);
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
            checks += 1;
        }
    }
    report(
        results,
        "mahalanobis oracle",
        worst <= 1e-9,
        format!(
            "{instances} instances ({deficient} rank-deficient), {checks} scores, max err {worst:.2e} (limit 1e-9, relative above |s| = 1)"
        ),
    );
}

// ---------------------------------------------------------------- metrics

fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &o in ood {
        for &i in id {
            if o > i {
                twice += 2;
            } else if o == i {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * id.len() * ood.len()) as f64
}

fn brute_far95(id: &[f64], ood: &[f64]) -> f64 {
    // smallest candidate threshold accepting at least 95% of ID
    let mut best = f64::INFINITY;
    for &t in id {
        let accepted = id.iter().filter(|&&s| s <= t).count();
        if 100 * accepted >= 95 * id.len() && t < best {
            best = t;
        }
    }
    ood.iter().filter(|&&s| s <= best).count() as f64 / ood.len() as f64
}

fn metric_oracle(results: &mut Vec<Outcome>) {
    let mut rng = SplitMix64::new(4242);
    let samples = 150;
    let mut mismatches = 0;
    let mut with_ties = 0;
    for _ in 0..samples {
        let n_id = 1 + rng.below(200);
        let n_ood = 1 + rng.below(200);
        let grid = 2 + rng.below(40);
        let mut draw = |n: usize, shift: usize| -> Vec<f64> {
            (0..n)
                .map(|_| (rng.below(grid) + shift) as f64 * 0.25)
                .collect()
        };
        let id = draw(n_id, 0);
        let ood = draw(n_ood, grid / 3);
        let mut all = id.clone();
        all.extend(&ood);
        all.sort_by(f64::total_cmp);
        if all.windows(2).any(|w| w[0] == w[1]) {
            with_ties += 1;
        }
        if auroc(&id, &ood).unwrap() != brute_auroc(&id, &ood)
            || far95(&id, &ood).unwrap() != brute_far95(&id, &ood)
        {
            mismatches += 1;
        }
    }
    report(
        results,
        "metric oracle",
        mismatches == 0 && samples >= 100,
        format!("{samples} samples (n <= 200, {with_ties} with ties), {mismatches} mismatches (exact match required)"),
    );
}

// -------------------------------------------------------- desk benchmark

fn desk_config(mode: LossMode, lambda: f64, synth: SynthConfig) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.source = DataSource::Synthetic(synth);
    cfg.loss.mode = mode;
    cfg.loss.lambda = lambda;
    cfg.scorers = ScorerKind::ALL.to_vec();
    cfg.seeds = vec![0, 1, 2, 3, 4];
    cfg
}

fn desk_synth() -> SynthConfig {
    SynthConfig {
        num_classes: 4,
        dim: 8,
        per_class: 250,
        ood_count: 200,
        seed: 11,
        ..SynthConfig::default()
    }
}

fn benchmarks(results: &mut Vec<Outcome>) {
    let start = Instant::now();
    let synth = desk_synth();
    let (id, ood) = gen_synthetic(&synth).unwrap();
    let data = PreparedData {
        id,
        ood_sets: vec![("displaced".into(), ood)],
    };
    let base = desk_config(LossMode::None, 0.0, synth.clone());
    let margin = desk_config(LossMode::Margin, 2.0, synth.clone());
    let b_none = run_benchmark(&base, &data).unwrap();
    let b_margin = run_benchmark(&margin, &data).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let m = |b: &oodkit::harness::Benchmark, k| b.mean("displaced", k).unwrap();
    let none_maha = m(&b_none, ScorerKind::Maha);
    let none_msp = m(&b_none, ScorerKind::Msp);
    let margin_maha = m(&b_margin, ScorerKind::Maha);
    report(
        results,
        "directional (a) maha >= msp",
        none_maha.auroc >= none_msp.auroc,
        format!(
            "no-contrastive mean AUROC maha {:.4} vs msp {:.4}",
            none_maha.auroc, none_msp.auroc
        ),
    );
    report(
        results,
        "directional (b) margin+maha far95 <= maha",
        margin_maha.far95 <= none_maha.far95,
        format!(
            "mean FAR95 margin+maha {:.4} vs no-contrastive maha {:.4}",
            margin_maha.far95, none_maha.far95
        ),
    );
    report(
        results,
        "directional (c) margin+maha auroc >= 0.95",
        margin_maha.auroc >= 0.95,
        format!("mean AUROC {:.4} over 5 seeds", margin_maha.auroc),
    );
    report(
        results,
        "desk benchmark runtime",
        secs < 180.0,
        format!("2 loss modes x 5 seeds trained and scored in {secs:.1}s (limit 180s)"),
    );

    let mut worst_gap = 0.0f64;
    let mut per_seed = Vec::new();
    for (a, b) in b_none.runs.iter().zip(&b_margin.runs) {
        assert_eq!(a.seed, b.seed);
        let gap = b.outcome.checkpoint.val_accuracy - a.outcome.checkpoint.val_accuracy;
        worst_gap = worst_gap.max(-gap);
        per_seed.push(format!(
            "{}:{:.3}/{:.3}",
            a.seed, a.outcome.checkpoint.val_accuracy, b.outcome.checkpoint.val_accuracy
        ));
    }
    report(
        results,
        "non-interference",
        worst_gap <= 0.02 + 1e-12,
        format!(
            "val accuracy lambda=0 / lambda=2 per seed [{}], worst drop {:.3} (limit 0.02)",
            per_seed.join(" "),
            worst_gap
        ),
    );

    // held-out class sits close to class 0
    let novel_synth = SynthConfig {
        overlap: 0.7,
        ..desk_synth()
    };
    let (novel_base, _) = gen_synthetic(&novel_synth).unwrap();
    let novel_cfg = desk_config(LossMode::Margin, 2.0, novel_synth);
    let held = novel_synth_held();
    let mut aurocs = Vec::new();
    for &seed in &novel_cfg.seeds {
        let reps = novel_class_trial(&novel_cfg, &novel_base, held, seed).unwrap();
        aurocs.push(reps.iter().find(|(k, _)| *k == ScorerKind::Maha).unwrap().1.auroc);
    }
    let novel = aurocs.iter().sum::<f64>() / aurocs.len() as f64;
    report(
        results,
        "novel-class harder than displaced cluster",
        novel < margin_maha.auroc,
        format!(
            "margin+maha AUROC: overlapping held-out class {novel:.4} vs displaced cluster {:.4}",
            margin_maha.auroc
        ),
    );
}

fn novel_synth_held() -> usize {
    // the overlap moves the last class toward class 0
    desk_synth().num_classes - 1
}

// -------------------------------------------------------- scorer invariants

fn maha_affine(results: &mut Vec<Outcome>) {
    let mut rng = SplitMix64::new(99);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let d = 2 + rng.below(4);
        let c = 2 + rng.below(3);
        let n = 40;
        let y: Vec<usize> = (0..n).map(|i| i % c).collect();
        let x: Vec<Vec<f64>> = y
            .iter()
            .map(|&l| (0..d).map(|k| rng.normal() + (l + k) as f64).collect())
            .collect();
        // well-conditioned random A = I + 0.3·G
        let a = Matrix::from_rows(
            &(0..d)
                .map(|r| {
                    (0..d)
                        .map(|k| if r == k { 1.0 } else { 0.0 } + 0.3 * rng.normal())
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let b: Vec<f64> = (0..d).map(|_| 5.0 * rng.normal()).collect();
        let map = |v: &Vec<f64>| -> Vec<f64> {
            a.matvec(v).unwrap().iter().zip(&b).map(|(p, q)| p + q).collect()
        };
        let xt: Vec<Vec<f64>> = x.iter().map(map).collect();
        let det = fit_maha(&x, &y, c).unwrap();
        let det_t = fit_maha(&xt, &y, c).unwrap();
        for _ in 0..5 {
            let q: Vec<f64> = (0..d).map(|_| 3.0 * rng.normal()).collect();
            let s = score_maha(&det, &q).unwrap();
            let st = score_maha(&det_t, &map(&q)).unwrap();
            worst = worst.max((s - st).abs() / s.abs().max(1.0));
        }
    }
    report(
        results,
        "maha affine invariance",
        worst <= 1e-6,
        format!("30 full-rank refits, max deviation {worst:.2e} (limit 1e-6)"),
    );
}

fn auroc_monotone(results: &mut Vec<Outcome>) {
    let mut rng = SplitMix64::new(31);
    let mut broken = 0;
    for _ in 0..100 {
        let n = 1 + rng.below(150);
        // integer grid: every map below stays strictly increasing in f64
        let id: Vec<f64> = (0..n).map(|_| rng.below(20) as f64).collect();
        let ood: Vec<f64> = (0..n + 3).map(|_| (rng.below(20) + 3) as f64).collect();
        let base = auroc(&id, &ood).unwrap();
        let transforms: [&dyn Fn(f64) -> f64; 3] =
            [&|x| x.exp(), &|x| 3.0 * x + 7.0, &|x| (x + 1.0).ln() + x.powi(3)];
        for f in transforms {
            let fi: Vec<f64> = id.iter().map(|&v| f(v)).collect();
            let fo: Vec<f64> = ood.iter().map(|&v| f(v)).collect();
            if auroc(&fi, &fo).unwrap() != base {
                broken += 1;
            }
        }
    }
    report(
        results,
        "auroc monotone invariance",
        broken == 0,
        format!("100 tied samples x 3 strictly increasing maps, {broken} changes (exact)"),
    );
}

fn sign_convention(results: &mut Vec<Outcome>) {
    let mut rng = SplitMix64::new(5);
    let d = 4;
    let weight = Matrix::from_rows(&[vec![2.0, 0.0, 0.0, 0.0], vec![-2.0, 0.0, 0.0, 0.0]]).unwrap();
    let mut params = init_params(3, &[], d, 2, 0).unwrap();
    params.head_weight = weight;
    params.head_bias = vec![0.0, 0.0];
    let mut val = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = (0..d).map(|_| 0.2 * rng.normal()).collect();
        v[0] += 3.0 * sign;
        val.push(v);
        labels.push(i % 2);
    }
    let far = vec![0.0, 0.0, 0.0, 50.0];
    let mut failing = Vec::new();
    for kind in ScorerKind::ALL {
        let det = DetectorArtifact::fit(kind, &params, &val, &labels, FitOptions::default()).unwrap();
        let far_score = det.score(&far).unwrap();
        let max_val = val
            .iter()
            .map(|v| det.score(v).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        if far_score <= max_val {
            failing.push(format!("{kind} ({far_score} <= {max_val})"));
        }
    }
    report(
        results,
        "score sign convention",
        failing.is_empty(),
        if failing.is_empty() {
            "far point outscores all 40 validation points under msp, energy, maha, cosine".into()
        } else {
            format!("violations: {}", failing.join(", "))
        },
    );
}

#[test]
fn acceptance() {
    println!();
    let mut results = Vec::new();
    gradient_suite(&mut results);
    maha_oracle(&mut results);
    metric_oracle(&mut results);
    benchmarks(&mut results);
    maha_affine(&mut results);
    auroc_monotone(&mut results);
    sign_convention(&mut results);
    let failed: Vec<&Outcome> = results.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    assert!(
        failed.is_empty(),
        "failed criteria: {}",
        failed
            .iter()
            .map(|o| format!("{} ({})", o.name, o.detail))
            .collect::<Vec<_>>()
            .join("; ")
    );
}
