//! Acceptance suite: one PASS/FAIL line per criterion. Failures exit
//! non-zero only with `DSS_ACCEPTANCE_STRICT` set, so that `cargo test` still
//! runs the targets that sort after this one. Criteria 6–9 train six networks
//! (two identical passes of three) and take about half an hour on one core.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use dss_core::crf::{mean_field_infer, mean_field_observed, exact_map_small, unary_from_saliency, CrfParams};
use dss_core::data::netpbm::encode;
use dss_core::data::sample::{crop, map_to_raster};
use dss_core::data::{synth_range, synth_rasters, Raster, Sample};
use dss_core::gradcheck::{grad_check, GradCheckConfig};
use dss_core::graph::Graph;
use dss_core::metrics::{evaluate, f_measure, max_f_measure, mae, pr_curve, precision_recall, threshold, MaxFMode};
use dss_core::net::ablate::train_and_evaluate;
use dss_core::net::{combine_side_activations, total_loss, LossKind, NetworkConfig, Pattern, TrainConfig, NUM_SIDES};
use dss_core::ops::{class_balanced_ce_forward, standard_ce_forward};
use dss_core::tensor::Tensor;
use dss_core::{Network, SeededRng};

/// Checked-in reference run of criteria 6–8.
const REFERENCE: &str = include_str!("reference/benchmark.json");

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, pass: bool, label: &str, detail: String) {
        let line = format!("[{}] {label}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn criterion_1(report: &mut Report) {
    let start = Instant::now();
    let mut rng = SeededRng::new(101);
    let net = Network::build(&NetworkConfig::with_pattern(Pattern::Pattern3), 42)
        .unwrap()
        .cast::<f64>();
    let image = Tensor::<f64>::uniform([1, 3, 32, 32], 0.5, &mut rng);
    let gt = Tensor::from_vec(
        [1, 1, 32, 32],
        (0..1024).map(|_| (rng.next_f64() < 0.3) as u8 as f64).collect(),
    )
    .unwrap();
    let result = grad_check(
        net.params(),
        |g: &mut Graph<f64>, store| {
            let sides = net.forward_graph_with(g, store, &image)?;
            total_loss(g, &sides, &gt, &[1.0; NUM_SIDES], LossKind::Standard)
        },
        GradCheckConfig::default(),
    );
    let elapsed = start.elapsed();
    match result {
        Ok(r) => {
            let worst = r.worst().map(|e| format!("{}[{}]", e.param, e.element)).unwrap_or_default();
            report.record(
                r.max_rel_error < 1e-3 && elapsed < Duration::from_secs(60),
                "1 gradient correctness",
                format!(
                    "max rel error {:.2e} over {} elements (< 1e-3, worst {worst}; {} kink crossings resampled), {:.1} s (< 60 s)",
                    r.max_rel_error,
                    r.entries.len(),
                    r.skipped,
                    secs(elapsed)
                ),
            );
        }
        Err(e) => report.record(false, "1 gradient correctness", format!("error: {e}")),
    }
}

/// Products of edge weights over every descending path `from → … → to`.
fn path_weight(from: usize, to: usize, edges: &[(usize, usize, f64)]) -> f64 {
    if from == to {
        return 1.0;
    }
    edges
        .iter()
        .filter(|e| e.1 == to && e.0 <= from)
        .map(|&(mid, _, w)| w * path_weight(from, mid, edges))
        .sum()
}

fn criterion_2(report: &mut Report) {
    let mut rng = SeededRng::new(202);
    let patterns = [Pattern::Pattern1, Pattern::Pattern2, Pattern::Pattern3, Pattern::Full];
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let pattern = patterns[trial % patterns.len()];
        let edges: Vec<_> = pattern
            .edges()
            .into_iter()
            .map(|(i, m)| (i, m, rng.uniform(-1.0, 1.0)))
            .collect();
        let maps: Vec<Tensor<f64>> = (0..NUM_SIDES)
            .map(|_| Tensor::uniform([1, 1, 4, 4], 1.0, &mut rng))
            .collect();
        let mut g = Graph::<f64>::new();
        let a: Vec<_> = maps.iter().map(|m| g.input(m.clone())).collect();
        let a: [_; NUM_SIDES] = a.try_into().unwrap();
        let e: Vec<_> = edges
            .iter()
            .map(|&(i, m, w)| (i, m, g.input(Tensor::scalar(w))))
            .collect();
        let r = combine_side_activations(&mut g, &a, &e).unwrap();
        for m in 1..=NUM_SIDES {
            for p in 0..16 {
                let want: f64 = (m..=NUM_SIDES)
                    .map(|i| path_weight(i, m, &edges) * maps[i - 1].data()[p])
                    .sum();
                worst = worst.max((g.value(r[m - 1]).data()[p] - want).abs());
            }
        }
    }

    let x = Tensor::uniform([1, 3, 32, 32], 0.5, &mut rng);
    let plain = Network::build(&NetworkConfig::with_pattern(Pattern::None), 9).unwrap().forward(&x).unwrap();
    let mut bitwise = true;
    for pattern in [Pattern::Pattern1, Pattern::Pattern2, Pattern::Pattern3, Pattern::Full] {
        let mut net = Network::build(&NetworkConfig::with_pattern(pattern), 9).unwrap();
        for (i, m) in pattern.edges() {
            net.set_short_weight(i, m, 0.0).unwrap();
        }
        let acts = net.forward(&x).unwrap();
        bitwise &= acts.z_final.data() == plain.z_final.data()
            && (0..NUM_SIDES).all(|m| acts.r_tilde[m].data() == plain.r_tilde[m].data());
    }
    report.record(
        worst < 1e-5 && bitwise,
        "2 short-connection algebra",
        format!("1000 assignments, max |recursive − path expansion| {worst:.2e} (< 1e-5); zero r bitwise equal to none: {bitwise}"),
    );
}

fn criterion_3(report: &mut Report) {
    let n = 64;
    let half = Tensor::<f32>::full([1, 1, 8, 8], 0.5);
    let zero = Tensor::<f32>::zeros([1, 1, 8, 8]);
    let ln2 = standard_ce_forward(&zero, &half).unwrap() as f64 / n as f64;
    let e1 = (ln2 - std::f64::consts::LN_2).abs();

    let pos = Tensor::<f32>::full([1, 1, 8, 8], 1.0);
    let sat_pos = standard_ce_forward(&Tensor::full([1, 1, 8, 8], 20.0), &pos).unwrap() as f64 / n as f64;
    let sat_neg = standard_ce_forward(&Tensor::full([1, 1, 8, 8], -20.0), &zero).unwrap() as f64 / n as f64;

    let mut rng = SeededRng::new(303);
    let logits = Tensor::<f32>::uniform([1, 1, 8, 8], 4.0, &mut rng);
    let mut labels: Vec<f32> = (0..n).map(|i| (i < n / 2) as u8 as f32).collect();
    rng.shuffle(&mut labels);
    let z = Tensor::from_vec([1, 1, 8, 8], labels).unwrap();
    let std_loss = standard_ce_forward(&logits, &z).unwrap() as f64;
    let cb = class_balanced_ce_forward(&logits, &z).unwrap() as f64;
    let e3 = (cb - 0.5 * std_loss).abs();
    report.record(
        e1 < 1e-6 && sat_pos < 1e-6 && sat_neg < 1e-6 && e3 < 1e-6,
        "3 loss identities",
        format!(
            "|CE(0.5, 0) − ln 2| {e1:.1e}; saturated {sat_pos:.1e}, {sat_neg:.1e} (< 1e-6); |balanced − ½·standard| {e3:.1e} (< 1e-6)"
        ),
    );
}

fn criterion_4(report: &mut Report) {
    let start = Instant::now();
    let mut rng = SeededRng::new(2024);
    let mut matches = 0;
    let mut softmin_err: f64 = 0.0;
    let mut norm_err: f64 = 0.0;
    let around = |rng: &mut SeededRng, v: f64| v * rng.uniform(0.5, 1.5);
    for _ in 0..100 {
        let s = Tensor::from_vec([1, 1, 2, 2], (0..4).map(|_| rng.next_f64() as f32).collect()).unwrap();
        let img = Raster::rgb(2, 2, (0..12).map(|_| rng.below(256) as u8).collect()).unwrap();
        let d = CrfParams::default();
        let params = CrfParams {
            w1: around(&mut rng, d.w1),
            w2: around(&mut rng, d.w2),
            sigma_alpha: around(&mut rng, d.sigma_alpha),
            sigma_beta: around(&mut rng, d.sigma_beta),
            sigma_gamma: around(&mut rng, d.sigma_gamma),
            tau: around(&mut rng, d.tau),
            iterations: d.iterations,
        };
        let q = mean_field_observed(&s, &img, &params, |_, q| {
            for v in q {
                norm_err = norm_err.max((v[0] + v[1] - 1.0).abs());
            }
        })
        .unwrap();
        let map = exact_map_small(&s, &img, &params).unwrap();
        if q.data().iter().zip(&map).all(|(&p, &l)| (p > 0.5) == (l == 1)) {
            matches += 1;
        }

        let uncoupled = CrfParams { w1: 0.0, w2: 0.0, ..params };
        let q0 = mean_field_infer(&s, &img, &uncoupled).unwrap();
        let soft = unary_from_saliency(&s, params.tau).unwrap().softmin();
        for (a, b) in q0.data().iter().zip(soft) {
            softmin_err = softmin_err.max((*a as f64 - b).abs());
        }
    }
    let elapsed = start.elapsed();
    report.record(
        matches >= 95 && softmin_err < 1e-6 && norm_err < 1e-6 && elapsed < Duration::from_secs(30),
        "4 CRF oracle equivalence",
        format!(
            "{matches}/100 match exact MAP (≥ 95); softmin error {softmin_err:.1e}, normalization error {norm_err:.1e} (< 1e-6); {:.2} s (< 30 s)",
            secs(elapsed)
        ),
    );
}

fn criterion_5(report: &mut Report) {
    let mut rng = SeededRng::new(505);
    let mut count_mismatch = 0;
    let mut real_err: f64 = 0.0;
    for _ in 0..50 {
        let pred = Tensor::from_vec([1, 1, 8, 8], (0..64).map(|_| rng.next_f64() as f32).collect()).unwrap();
        let gt_v: Vec<f32> = (0..64).map(|_| (rng.next_f64() < 0.4) as u8 as f32).collect();
        let gt = Tensor::from_vec([1, 1, 8, 8], gt_v.clone()).unwrap();
        let positives = gt_v.iter().filter(|&&z| z == 1.0).count();

        // Naive per-threshold counting.
        let mut oracle_p = Vec::new();
        let mut oracle_r = Vec::new();
        for t in 0..256 {
            let cut = t as f32 / 255.0;
            let (mut tp, mut b) = (0usize, 0usize);
            for (p, z) in pred.data().iter().zip(&gt_v) {
                if *p > cut {
                    b += 1;
                    if *z == 1.0 {
                        tp += 1;
                    }
                }
            }
            oracle_p.push(if b == 0 { 0.0 } else { tp as f64 / b as f64 });
            oracle_r.push(if positives == 0 { 0.0 } else { tp as f64 / positives as f64 });

            let bin = Tensor::from_vec([1, 1, 8, 8], pred.data().iter().map(|&p| (p > cut) as u8 as f32).collect()).unwrap();
            let (p, r) = precision_recall(&bin, &gt).unwrap();
            if positives > 0 && (p != oracle_p[t] || r != oracle_r[t]) {
                count_mismatch += 1;
            }
        }
        if positives > 0 {
            let curve = pr_curve(std::slice::from_ref(&pred), std::slice::from_ref(&gt)).unwrap();
            for t in 0..256 {
                if curve.precision[t] != oracle_p[t] || curve.recall[t] != oracle_r[t] {
                    count_mismatch += 1;
                }
                assert_eq!(threshold(t), t as f32 / 255.0);
            }
            let oracle_f: Vec<f64> = oracle_p
                .iter()
                .zip(&oracle_r)
                .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 1.3 * p * r / (0.3 * p + r) })
                .collect();
            for (f, o) in curve.f_values().iter().zip(&oracle_f) {
                real_err = real_err.max((f - o).abs());
            }
            let oracle_max = oracle_f.iter().cloned().fold(0.0, f64::max);
            real_err = real_err.max((max_f_measure(&curve) - oracle_max).abs());
        }
        let oracle_mae = pred
            .data()
            .iter()
            .zip(&gt_v)
            .map(|(&p, &z)| (p as f64 - z as f64).abs())
            .sum::<f64>()
            / 64.0;
        real_err = real_err.max((mae(&pred, &gt).unwrap() - oracle_mae).abs());
    }
    let half = f_measure(0.5, 0.5);
    report.record(
        count_mismatch == 0 && real_err < 1e-7 && half == 0.5,
        "5 metric oracle equivalence",
        format!("50 instances: {count_mismatch} count mismatches (0); max real error {real_err:.1e} (< 1e-7); f_measure(0.5, 0.5) = {half}"),
    );
}

/// Everything criteria 6–9 inspect from one benchmark pass.
#[derive(PartialEq)]
struct Artifacts {
    checkpoint: Vec<u8>,
    loss_csv: String,
    predictions: Vec<u8>,
    eval_json: String,
    refined: Vec<u8>,
    refined_json: String,
    ablation_csv: String,
    max_f: f64,
    mae: f64,
    epoch_means: Vec<f64>,
    train_time: Duration,
    refined_max_f: f64,
    refined_mae: f64,
    ablation: Vec<(Pattern, f64)>,
}

/// 8-bit PGM round trip, as the CLI stores predictions.
fn quantized(map: &Tensor<f32>) -> (Tensor<f32>, Vec<u8>) {
    let raster = map_to_raster(map).unwrap();
    let values = raster.data.iter().map(|&b| b as f32 / 255.0).collect();
    (Tensor::from_vec(map.shape(), values).unwrap(), encode(&raster))
}

fn benchmark(train_set: &[Sample], eval_set: &[Sample], originals: &[Raster], cfg: &TrainConfig) -> Artifacts {
    let ids: Vec<_> = eval_set.iter().map(|s| s.id.clone()).collect();
    let gts: Vec<_> = eval_set.iter().map(|s| crop(&s.gt, s.original.0, s.original.1)).collect();

    let start = Instant::now();
    let (net, trained, _) =
        train_and_evaluate(&NetworkConfig::with_pattern(Pattern::Pattern3), cfg, train_set, eval_set).unwrap();
    let train_time = start.elapsed();
    let mut checkpoint = Vec::new();
    net.params().write_checkpoint(&mut checkpoint).unwrap();

    let mut preds = Vec::new();
    let mut pred_bytes = Vec::new();
    for s in eval_set {
        let map = crop(&net.infer(&s.image).unwrap(), s.original.0, s.original.1);
        let (q, bytes) = quantized(&map);
        preds.push(q);
        pred_bytes.extend(bytes);
    }
    let eval = evaluate(&ids, &preds, &gts, MaxFMode::DatasetMean).unwrap();

    let crf = CrfParams::default();
    let mut refined = Vec::new();
    let mut refined_bytes = Vec::new();
    for (p, img) in preds.iter().zip(originals) {
        let (q, bytes) = quantized(&mean_field_infer(p, img, &crf).unwrap());
        refined.push(q);
        refined_bytes.extend(bytes);
    }
    let refined_eval = evaluate(&ids, &refined, &gts, MaxFMode::DatasetMean).unwrap();

    let mut ablation = vec![(Pattern::Pattern3, eval.max_f)];
    for pattern in [Pattern::Pattern1, Pattern::None] {
        let (_, _, e) = train_and_evaluate(&NetworkConfig::with_pattern(pattern), cfg, train_set, eval_set).unwrap();
        ablation.push((pattern, e.max_f));
    }
    let mut ablation_csv = String::from("pattern,max_f\n");
    for (p, f) in &ablation {
        writeln!(ablation_csv, "{p},{f:.6}").unwrap();
    }

    Artifacts {
        checkpoint,
        loss_csv: trained.trace_csv(),
        predictions: pred_bytes,
        eval_json: eval.to_json(),
        refined: refined_bytes,
        refined_json: refined_eval.to_json(),
        ablation_csv,
        max_f: eval.max_f,
        mae: eval.mae,
        epoch_means: trained.epoch_means,
        train_time,
        refined_max_f: refined_eval.max_f,
        refined_mae: refined_eval.mae,
        ablation,
    }
}

fn reference_value(key: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(REFERENCE).expect("reference JSON");
    v[key].as_f64().unwrap_or(f64::NAN)
}

fn criteria_6_to_9(report: &mut Report) {
    let seed = 42;
    let train_set = synth_range(seed, 0, 200, 64).unwrap();
    let eval_set = synth_range(seed, 200, 50, 64).unwrap();
    let originals: Vec<Raster> = (200..250).map(|i| synth_rasters(seed, i, 64).unwrap().0).collect();
    let cfg = TrainConfig {
        seed,
        epochs: 20,
        hflip: true,
        ..TrainConfig::default()
    };

    let a = benchmark(&train_set, &eval_set, &originals, &cfg);
    let first = a.epoch_means[0];
    let last = *a.epoch_means.last().unwrap();
    let reduction = 1.0 - last / first;
    report.record(
        reduction >= 0.5,
        "6a training loss reduction",
        format!("epoch 1 mean {first:.1} → epoch 20 mean {last:.1}, reduction {:.1}% (≥ 50%)", 100.0 * reduction),
    );
    report.record(
        a.max_f >= 0.90 && a.mae <= 0.05 && a.train_time <= Duration::from_secs(15 * 60),
        "6 end-to-end synthetic regression",
        format!(
            "max-F {:.4} (≥ 0.90; reference {:.4}), MAE {:.4} (≤ 0.05; reference {:.4}), training {:.0} s (≤ 900 s)",
            a.max_f,
            reference_value("max_f"),
            a.mae,
            reference_value("mae"),
            secs(a.train_time)
        ),
    );

    let f = |p: Pattern| a.ablation.iter().find(|r| r.0 == p).unwrap().1;
    let (f3, f1, f0) = (f(Pattern::Pattern3), f(Pattern::Pattern1), f(Pattern::None));
    report.record(
        f3 >= f1 && f1 >= f0 - 0.01,
        "7 ablation direction",
        format!("max-F pattern3 {f3:.4} ≥ pattern1 {f1:.4} ≥ none {f0:.4} − 0.01"),
    );

    let df = a.refined_max_f - a.max_f;
    let dm = a.refined_mae - a.mae;
    report.record(
        df >= -0.01 && dm <= 0.005,
        "8 CRF non-degradation",
        format!(
            "max-F {:.4} → {:.4} (Δ {df:+.4} ≥ −0.01), MAE {:.4} → {:.4} (Δ {dm:+.4} ≤ +0.005)",
            a.max_f, a.refined_max_f, a.mae, a.refined_mae
        ),
    );

    let b = benchmark(&train_set, &eval_set, &originals, &cfg);
    let same = [
        ("checkpoint", a.checkpoint == b.checkpoint),
        ("loss trace", a.loss_csv == b.loss_csv),
        ("predictions", a.predictions == b.predictions),
        ("eval report", a.eval_json == b.eval_json),
        ("CRF maps", a.refined == b.refined),
        ("CRF report", a.refined_json == b.refined_json),
        ("ablation", a.ablation_csv == b.ablation_csv),
    ];
    let differing: Vec<_> = same.iter().filter(|s| !s.1).map(|s| s.0).collect();
    report.record(
        differing.is_empty(),
        "9 determinism",
        if differing.is_empty() {
            format!("{} artifact groups byte-identical across two runs", same.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    );
    println!("reference values: {}", REFERENCE.trim().replace('\n', " "));
    println!(
        "this run: max_f {:.6} mae {:.6} crf_max_f {:.6} crf_mae {:.6} ablation {:?}",
        a.max_f, a.mae, a.refined_max_f, a.refined_mae, a.ablation
    );
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    criterion_1(&mut report);
    criterion_2(&mut report);
    criterion_3(&mut report);
    criterion_4(&mut report);
    criterion_5(&mut report);
    criteria_6_to_9(&mut report);
    let failed: Vec<_> = report.lines.iter().filter(|l| !l.0).map(|l| l.1.as_str()).collect();
    println!(
        "acceptance: {} passed, {} failed",
        report.lines.len() - failed.len(),
        failed.len()
    );
    for line in &failed {
        println!("failed: {line}");
    }
    if !failed.is_empty() && std::env::var_os("DSS_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
