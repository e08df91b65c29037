//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use dualdrive::features::{procrustes, Branch, FeatureMatrix, FeaturePairDataset, Level, Split, DEFAULT_RIDGE};
use dualdrive::gating::{
    energy_decomposition, gate_evaluate, gate_inputs, indicators, learned_gate_predict, learned_gate_train, rule_decisions,
    rule_score, BranchScores, Choice, GateConfig, GateDecision, GateFeatures, GateInput, GateTrainConfig, Strategy,
};
use dualdrive::linalg;
use dualdrive::nn::{finite_difference, relative_error, Parameters};
use dualdrive::rng::{self, Stream};
use dualdrive::sae::{
    kink_distance, sae_loss, sae_loss_and_grad, sae_metrics, sae_train, shuffled_pair_control, variance_attribution, SaeBatch,
    SaeDims, SaeLossWeights, SaeModel, StandardizedPair, TrainConfig, LOSS_TERMS,
};
use dualdrive::scene::{epdms, epdms_filter, pdms, KernelConfig, MetricVersion, SubScores};
use dualdrive::selection::{
    advantage_records, branch_scores, gamma_for_fast_fraction, ground_truth_score, interpolate_candidates, oracle_best_of_n,
    route_table, scorer_train, select, speedup, sweep_table, win_count, AdvantageRecord, DualConfig, GroundTruthScorer,
    ScorerConfig, ScorerSample, DEFAULT_INTERIOR_ALPHAS,
};
use dualdrive::similarity::{cca, linear_cka_values, permutation_null_ceiling};
use dualdrive::synth::{gen_benchmark, gen_paired_features, BenchmarkSpec, PlantedSpec, ScenarioSet};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn gauss(seed: u64, sub: u64, n: usize, d: usize) -> DMatrix<f64> {
    linalg::gaussian_matrix(n, d, &mut rng::stream(seed, Stream::Permutation, sub))
}

fn pair_from(x: DMatrix<f64>, y: DMatrix<f64>) -> FeaturePairDataset {
    FeaturePairDataset::new(
        FeatureMatrix::from_values(x, Level::Backbone, Branch::Vlm).unwrap(),
        FeatureMatrix::from_values(y, Level::Backbone, Branch::Vision).unwrap(),
        Split::Train,
    )
    .unwrap()
}

// 1 ----------------------------------------------------------------------

fn pdms_oracle(s: &[f64; 10]) -> f64 {
    let [nc, dac, _, _, ep, ttc, c, _, _, _] = *s;
    nc * dac * (5.0 * ep + 5.0 * ttc + 2.0 * c) / 12.0
}

fn epdms_oracle(a: &[f64; 10], h: &[f64; 10]) -> f64 {
    let f = |i: usize| if h[i] == 0.0 { 1.0 } else { a[i] };
    // nc dac ddc tlc ep ttc c hc lk ec
    let mult = f(0) * f(1) * f(2) * f(3);
    mult * (5.0 * f(5) + 5.0 * f(4) + 2.0 * f(7) + 2.0 * f(8) + 2.0 * f(9)) / 16.0
}

fn metric_grid() -> Vec<[f64; 10]> {
    let mut out = Vec::new();
    for nc in [0.0, 0.5, 1.0] {
        for ddc in [0.0, 0.5, 1.0] {
            for ep in [0.0, 0.25, 0.5, 0.75, 1.0] {
                for bits in 0..(1u32 << 7) {
                    let b = |k: u32| ((bits >> k) & 1) as f64;
                    out.push([nc, b(0), ddc, b(1), ep, b(2), b(3), b(4), b(5), b(6)]);
                }
            }
        }
    }
    out
}

fn c1_metrics() -> Outcome {
    let grid = metric_grid();
    // Only whether a human field is zero matters to the filter.
    let humans: Vec<[f64; 10]> = (0..(1u32 << 10))
        .map(|m| std::array::from_fn(|i| if (m >> i) & 1 == 1 { 0.0 } else { [1.0, 1.0, 0.5, 1.0, 0.6, 1.0, 1.0, 1.0, 1.0, 1.0][i] }))
        .collect();
    let mut worst: f64 = 0.0;
    let mut evals = 0usize;
    for a in &grid {
        let s = SubScores::from_array(*a);
        worst = worst.max((pdms(&s) - pdms_oracle(a)).abs());
        for h in &humans {
            worst = worst.max((epdms(&s, &SubScores::from_array(*h)) - epdms_oracle(a, h)).abs());
            evals += 1;
        }
        for &v in a {
            for hv in [0.0, 0.5, 1.0] {
                let expect = if hv == 0.0 { 1.0 } else { v };
                worst = worst.max((epdms_filter(v, hv) - expect).abs());
            }
        }
    }
    check(worst <= 1e-12, || format!("max abs error {worst:e}"))?;
    Ok(format!("{} agent combinations, {evals} epdms evaluations, max abs error {worst:e}", grid.len()))
}

// 2 ----------------------------------------------------------------------

fn c2_cka() -> Outcome {
    let mut worst = [0.0f64; 4];
    for i in 0..50u64 {
        let mut r = rng::stream(i, Stream::Permutation, 200);
        let n = r.random_range(10..80);
        let dx = r.random_range(2..12);
        let dy = r.random_range(2..12);
        let x = gauss(i, 201, n, dx);
        let y = &x.columns(0, dx.min(dy)).into_owned() * gauss(i, 202, dx.min(dy), dy) + gauss(i, 203, n, dy);
        let base = linear_cka_values(&x, &y).map_err(e)?;
        worst[0] = worst[0].max((linear_cka_values(&x, &x).map_err(e)? - 1.0).abs());
        let q = linalg::random_orthogonal(dx, &mut r);
        worst[1] = worst[1].max((linear_cka_values(&(&x * q), &y).map_err(e)? - base).abs());
        let c = r.random_range(0.01..100.0);
        worst[2] = worst[2].max((linear_cka_values(&(&x * c), &y).map_err(e)? - base).abs());
        worst[3] = worst[3].max((linear_cka_values(&y, &x).map_err(e)? - base).abs());
    }
    check(worst[0] <= 1e-9 && worst[1] <= 1e-9 && worst[2] <= 1e-9 && worst[3] <= 1e-10, || {
        format!("self {:e}, orthogonal {:e}, scale {:e}, symmetry {:e}", worst[0], worst[1], worst[2], worst[3])
    })?;
    Ok(format!(
        "50 instances; self {:e}, orthogonal {:e}, scale {:e}, symmetry {:e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

// 3 ----------------------------------------------------------------------

fn c3_cca() -> Outcome {
    let (n, d) = (2000, 8);
    let mut details = Vec::new();
    for seed in 0..5u64 {
        let x = gauss(seed, 300, n, d);
        let mut a = DMatrix::zeros(d, d);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1.0;
        let y = (&x * a + gauss(seed, 301, n, d) * 0.2) * linalg::random_orthogonal(d, &mut rng::stream(seed, Stream::Permutation, 302));
        let p = pair_from(x, y);
        let r = cca(&p, 0.99, DEFAULT_RIDGE).map_err(e)?;
        let ceiling = permutation_null_ceiling(&p, 0.99, DEFAULT_RIDGE, 100, seed).map_err(e)?;
        check(r.count_above(0.9) == 2, || format!("seed {seed}: {} correlations >= 0.9: {:?}", r.count_above(0.9), r.rho))?;
        check(r.rho[2..].iter().all(|&v| v < ceiling), || format!("seed {seed}: tail {:?} vs ceiling {ceiling}", &r.rho[2..]))?;
        details.push(format!("rho3={:.3}<{:.3}", r.rho[2], ceiling));
    }
    Ok(format!("5 seeds, two correlations >= 0.9 each; {}", details.join(" ")))
}

// 4 ----------------------------------------------------------------------

fn c4_procrustes() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let mut r = rng::stream(i, Stream::Permutation, 400);
        let n = r.random_range(20..200);
        let d = r.random_range(2..16);
        let src = gauss(i, 401, n, d);
        let q = linalg::random_orthogonal(d, &mut r);
        let reference = &src * &q;
        let s = FeatureMatrix::from_values(src, Level::Backbone, Branch::Vlm).map_err(e)?;
        let t = FeatureMatrix::from_values(reference.clone(), Level::Backbone, Branch::Vision).map_err(e)?;
        let m = procrustes(&s, &t).map_err(e)?;
        let aligned = m.apply(&s).map_err(e)?;
        worst = worst.max(m.residual).max((aligned.values() - &reference).norm());
    }
    check(worst < 1e-8, || format!("residual {worst:e}"))?;
    Ok(format!("20 instances, max residual {worst:e}"))
}

// 5 ----------------------------------------------------------------------

fn smooth_point(seed: u64, w: &SaeLossWeights) -> (SaeModel, DMatrix<f64>, DMatrix<f64>) {
    let dims = SaeDims {
        d_x: 3,
        d_y: 3,
        d_s: 2,
        d_u: 1,
        hidden: 4,
    };
    for attempt in 0.. {
        let mut r = rng::stream(seed, Stream::SaeInit, 5000 + attempt);
        let mut m = SaeModel::init(dims, &mut r).unwrap();
        let mut flat = m.to_flat();
        for v in flat.iter_mut() {
            *v += 0.1 * r.random_range(-1.0..1.0);
        }
        m.set_flat(&flat);
        let x = linalg::gaussian_matrix(6, 3, &mut r);
        let y = &x * 0.5 + linalg::gaussian_matrix(6, 3, &mut r);
        if kink_distance(&m, &SaeBatch::new(&x, &y), w.vic_margin) > 1e-3 {
            return (m, x, y);
        }
    }
    unreachable!()
}

fn c5_sae_gradient() -> Outcome {
    let mut report = Vec::new();
    let mut all_terms: Vec<(String, SaeLossWeights)> = LOSS_TERMS
        .iter()
        .map(|t| {
            (
                t.to_string(),
                SaeLossWeights {
                    vic_margin: 3.0,
                    ..SaeLossWeights::only(t)
                },
            )
        })
        .collect();
    all_terms.push((
        "total".into(),
        SaeLossWeights {
            cross: 0.5,
            ..Default::default()
        },
    ));
    for (name, w) in &all_terms {
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let (m, x, y) = smooth_point(seed, w);
            let batch = SaeBatch::new(&x, &y);
            let (_, g) = sae_loss_and_grad(&m, &batch, w).map_err(e)?;
            let fd = finite_difference(&m, 1e-5, |p| sae_loss(p, &batch, w).unwrap().total);
            worst = worst.max(relative_error(&g.to_flat(), &fd, 1e-8));
        }
        check(worst <= 1e-4, || format!("{name}: relative error {worst:e}"))?;
        report.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("100 points per term; worst relative error: {}", report.join(", ")))
}

// 6-8 --------------------------------------------------------------------

fn planted(seed: u64, n: usize) -> PlantedSpec {
    PlantedSpec {
        n,
        d_x: 16,
        d_y: 16,
        shared_dim: 4,
        unique_dim_x: 4,
        unique_dim_y: 4,
        shared_fraction: 0.7,
        noise_std: 0.3,
        seed,
    }
}

fn sae_cfg() -> TrainConfig {
    TrainConfig {
        seed: 3,
        epochs: 40,
        batch_size: 256,
        lr: 3e-3,
        d_s: 8,
        d_u: 4,
        hidden: 32,
    }
}

struct Trained {
    name: String,
    model: SaeModel,
    data: FeaturePairDataset,
}

fn c6_interchangeability(models: &mut Vec<Trained>) -> Outcome {
    let (pair, _) = gen_paired_features(&planted(6, 4000)).map_err(e)?;
    let (tr, te) = pair.split_at(3200).map_err(e)?;
    let train = StandardizedPair::fit(&tr).map_err(e)?;
    let eval = train.apply(&te).map_err(e)?;
    let mut gaps = Vec::new();
    for cross in [0.0, 1.0] {
        let w = SaeLossWeights {
            cross,
            ..Default::default()
        };
        let (m, _) = sae_train(&train, &w, &sae_cfg()).map_err(e)?;
        let met = sae_metrics(&m, &eval.data).map_err(e)?;
        gaps.push((met.gap_x, met.gap_y));
        models.push(Trained {
            name: format!("cross={cross}"),
            model: m,
            data: eval.data.clone(),
        });
    }
    let (g0, g1) = (gaps[0], gaps[1]);
    check(g1.0 < g0.0 && g1.1 < g0.1, || format!("gap x {:.4} -> {:.4}, y {:.4} -> {:.4}", g0.0, g1.0, g0.1, g1.1))?;
    Ok(format!("gap x {:.4} -> {:.4}, gap y {:.4} -> {:.4}", g0.0, g1.0, g0.1, g1.1))
}

fn c7_shuffle_control(models: &mut Vec<Trained>) -> Outcome {
    let (pair, _) = gen_paired_features(&planted(7, 2000)).map_err(e)?;
    let ds = StandardizedPair::fit(&pair).map_err(e)?;
    let cfg = sae_cfg();
    let w = SaeLossWeights::default();
    let r = shuffled_pair_control(&ds, &w, &cfg, None).map_err(e)?;
    let (m, _) = sae_train(&ds, &w, &cfg).map_err(e)?;
    models.push(Trained {
        name: "control".into(),
        model: m,
        data: ds.data.clone(),
    });
    let msg = format!(
        "original CKA true {:.4} shuffled {:.4}; shared CKA true {:.4} shuffled {:.4}",
        r.true_cka_orig, r.shuffled_cka_orig, r.true_cka_shared, r.shuffled_cka_shared
    );
    check(
        r.true_cka_orig >= 0.4 && r.shuffled_cka_orig <= 0.1 && r.shuffled_cka_shared < r.true_cka_shared,
        || msg.clone(),
    )?;
    Ok(msg)
}

fn c8_variance(models: &[Trained]) -> Outcome {
    check(!models.is_empty(), || "no trained models available".into())?;
    let mut worst: f64 = 0.0;
    for t in models {
        let v = variance_attribution(&t.model, &t.data).map_err(e)?;
        let d = v.x.identity_defect().max(v.y.identity_defect());
        check(d <= 1e-6, || format!("{}: relative defect {d:e}", t.name))?;
        worst = worst.max(d);
    }
    Ok(format!("{} models, worst relative defect {worst:e}", models.len()))
}

// 9 ----------------------------------------------------------------------

fn c9_gates(set: &ScenarioSet) -> Outcome {
    let features = set.features.as_ref().ok_or("benchmark has no features")?;
    let ds = StandardizedPair::fit(features).map_err(e)?;
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 128,
        ..sae_cfg()
    };
    let (model, _) = sae_train(&ds, &SaeLossWeights::default(), &cfg).map_err(e)?;
    let energies = energy_decomposition(&model, ds.data.x.values(), ds.data.y.values()).map_err(e)?;
    let ids = ds.data.x.sample_ids().to_vec();
    let feats: Vec<(String, GateFeatures)> = ids.iter().cloned().zip(energies.iter().copied()).collect();
    let scores = branch_scores(set, 0, MetricVersion::V1, &KernelConfig::default()).map_err(e)?;
    let gcfg = GateConfig::default();
    let mut lines = Vec::new();
    let bounded = |name: &str, d: &[GateDecision], scores: &BranchScores| -> Result<String, String> {
        let ev = gate_evaluate(d, scores).map_err(e)?;
        check(ev.min_mean <= ev.realized && ev.realized <= ev.oracle_mean, || {
            format!("{name}: {:.4} <= {:.4} <= {:.4} violated", ev.min_mean, ev.realized, ev.oracle_mean)
        })?;
        Ok(format!("{name} {:.4}", ev.realized))
    };
    for s in Strategy::ALL {
        let d = rule_decisions(&feats, s, &gcfg).map_err(e)?;
        lines.push(bounded(s.name(), &d, &scores)?);
    }
    // Learned gate: fit on the first half, decide on the second.
    let inputs = gate_inputs(ds.data.x.values(), ds.data.y.values(), GateInput::Combined).map_err(e)?;
    let labels: Vec<Option<bool>> = ids.iter().map(|id| scores.label(id)).collect::<dualdrive::Result<_>>().map_err(e)?;
    let half = ids.len() / 2;
    let gm = learned_gate_train(
        &inputs.rows(0, half).into_owned(),
        &labels[..half],
        &GateTrainConfig {
            epochs: 30,
            ..Default::default()
        },
    )
    .map_err(e)?;
    let test_in = inputs.rows(half, ids.len() - half).into_owned();
    let p = learned_gate_predict(&gm, &test_in).map_err(e)?;
    let d: Vec<GateDecision> = ids[half..]
        .iter()
        .zip(&p)
        .map(|(id, &s)| GateDecision {
            scenario_id: id.clone(),
            score: s,
            choice: if s >= 0.5 { Choice::Vlm } else { Choice::Vit },
        })
        .collect();
    lines.push(bounded("learned", &d, &scores)?);
    // Smoothed rule at a very sharp kappa, away from tau.
    let sharp = GateConfig { kappa: 1e4, ..gcfg };
    let mut compared = 0;
    for f in &energies {
        let ind = indicators(f, gcfg.epsilon).map_err(e)?;
        if (ind.d_bar - sharp.tau).abs() < 0.01 {
            continue;
        }
        let hard = rule_score(&ind, Strategy::SharedConditional, &sharp);
        let soft = rule_score(&ind, Strategy::Smoothed, &sharp);
        check((hard.0 - soft.0).abs() <= 1e-6, || format!("smoothed {} vs hard {}", soft.0, hard.0))?;
        compared += 1;
    }
    check(compared > 0, || "no scenario away from the threshold".into())?;
    Ok(format!("{}; smoothed = hard on {compared} scenarios at kappa 1e4", lines.join(", ")))
}

// 10-12 ------------------------------------------------------------------

fn c10_oracle(set: &ScenarioSet) -> Outcome {
    let k = KernelConfig::default();
    let mut lines = Vec::new();
    for version in [MetricVersion::V1, MetricVersion::V2] {
        let mut sums = [0.0f64; 4];
        let mut violations = 0;
        let mut count = 0usize;
        for sc in &set.scenarios {
            for r in 0..set.spec.seeds.len() {
                let vlm = ground_truth_score(&sc.slow[r], &sc.scene, version, &k).map_err(e)?;
                let vit = ground_truth_score(&sc.fast[r], &sc.scene, version, &k).map_err(e)?;
                let c = interpolate_candidates(&sc.fast[r], &sc.slow[r], &DEFAULT_INTERIOR_ALPHAS).map_err(e)?;
                let (_, bo11) = oracle_best_of_n(&c, &sc.scene, version, &k).map_err(e)?;
                let bo2 = vlm.max(vit);
                if bo11 < bo2 {
                    violations += 1;
                }
                sums[0] += vlm;
                sums[1] += vit;
                sums[2] += bo2;
                sums[3] += bo11;
                count += 1;
            }
        }
        let m = sums.map(|s| s / count as f64);
        let tag = format!("{version:?}");
        check(m[2] > m[0] && m[2] > m[1], || format!("{tag}: best-of-2 {:.4} vs vlm {:.4} vit {:.4}", m[2], m[0], m[1]))?;
        check(violations == 0, || format!("{tag}: {violations} superset violations"))?;
        lines.push(format!("{tag}: vlm {:.4} vit {:.4} bo2 {:.4} bo11 {:.4}", m[0], m[1], m[2], m[3]));
    }
    Ok(format!("{} scenarios x {} seeds, 0 violations; {}", set.scenarios.len(), set.spec.seeds.len(), lines.join("; ")))
}

fn c11_perfect_scorer(set: &ScenarioSet) -> Outcome {
    let k = KernelConfig::default();
    let gt = GroundTruthScorer::default();
    let mut n = 0;
    for sc in &set.scenarios {
        for r in 0..set.spec.seeds.len() {
            let c = interpolate_candidates(&sc.fast[r], &sc.slow[r], &DEFAULT_INTERIOR_ALPHAS).map_err(e)?;
            let (i, _) = select(&c, &gt, &sc.scene).map_err(e)?;
            let (j, _) = oracle_best_of_n(&c, &sc.scene, MetricVersion::V1, &k).map_err(e)?;
            check(c.trajectories[i] == c.trajectories[j] && i == j, || format!("{} seed {r}: select {i} vs oracle {j}", sc.id))?;
            n += 1;
        }
    }
    Ok(format!("identical trajectory on all {n} scenario-seed pairs"))
}

fn scorer_training_samples() -> Result<Vec<ScorerSample>, String> {
    let train = gen_benchmark(&BenchmarkSpec {
        n_scenes: 150,
        scene_seed: 101,
        ..Default::default()
    })
    .map_err(e)?;
    let k = KernelConfig::default();
    let mut out = Vec::new();
    for sc in &train.scenarios {
        for r in 0..train.spec.seeds.len() {
            let c = interpolate_candidates(&sc.fast[r], &sc.slow[r], &[0.5]).map_err(e)?;
            for t in &c.trajectories {
                let s = dualdrive::scene::compute_subscores(t, &sc.scene, MetricVersion::V1, &k).map_err(e)?;
                out.push(ScorerSample::new(t, &sc.scene, &s).map_err(e)?);
            }
        }
    }
    Ok(out)
}

fn c12_dual_route(set: &ScenarioSet) -> Outcome {
    let samples = scorer_training_samples()?;
    let (scorer, _) = scorer_train(
        &samples,
        &ScorerConfig {
            d_score: 32,
            epochs: 15,
            lr: 2e-3,
            ..Default::default()
        },
    )
    .map_err(e)?;
    let k = KernelConfig::default();
    let entries = route_table(set, 0, &scorer, MetricVersion::V1, &k).map_err(e)?;
    let cfg = DualConfig::default();
    let gammas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let curve = sweep_table(&entries, &gammas, &cfg).map_err(e)?;
    for w in curve.rows.windows(2) {
        check(w[1].fast_fraction <= w[0].fast_fraction, || {
            format!("fraction rises from {} to {} between gamma {} and {}", w[0].fast_fraction, w[1].fast_fraction, w[0].gamma, w[1].gamma)
        })?;
    }
    let metas: Vec<f64> = entries.iter().map(|x| x.fast_meta).collect();
    let (gamma, achieved) = gamma_for_fast_fraction(&metas, 0.85).map_err(e)?;
    let row = sweep_table(&entries, &[gamma], &cfg).map_err(e)?.rows[0];
    let sp = speedup(entries.len(), row.total_cost, &cfg);
    check((row.fast_fraction - 0.85).abs() < 1e-12, || format!("fast fraction {} (achievable {achieved})", row.fast_fraction))?;
    check((sp - 3.2).abs() <= 0.01, || format!("speedup {sp}"))?;
    // Perfect-scorer regime never falls below fast-only.
    let perfect = route_table(set, 0, &GroundTruthScorer::default(), MetricVersion::V1, &k).map_err(e)?;
    let fast_only = perfect.iter().map(|x| x.fast_score).sum::<f64>() / perfect.len() as f64;
    for r in &sweep_table(&perfect, &gammas, &cfg).map_err(e)?.rows {
        check(r.mean_score >= fast_only - 1e-12, || format!("gamma {}: {} < fast-only {fast_only}", r.gamma, r.mean_score))?;
    }
    Ok(format!(
        "fraction monotone over 11 gammas; c_slow {:.4}; gamma {gamma:.4} gives fast fraction {:.2}, speedup {sp:.4}, mean score {:.4}",
        cfg.cost_slow, row.fast_fraction, row.mean_score
    ))
}

// 13 ---------------------------------------------------------------------

fn binomial_99(n: u64, p: f64) -> (u64, u64) {
    let b = Binomial::new(p, n).unwrap();
    (b.inverse_cdf(0.005), b.inverse_cdf(0.995))
}

fn c13_wins(set: &ScenarioSet) -> Outcome {
    let tau = 0.2;
    // Planted records: 5% decisive VLM wins, 3% decisive ViT wins, the rest
    // inside the band.
    let (p_vlm, p_vit) = (0.05, 0.03);
    let n_scen = 2000;
    let mut records = Vec::new();
    for s in 0..n_scen {
        for seed in 1..=3u64 {
            let mut r = rng::stream(seed, Stream::SeedNoise, 10_000 + s as u64);
            let u: f64 = r.random();
            let base: f64 = r.random_range(0.3..0.5);
            let delta = if u < p_vlm {
                r.random_range(0.25..0.5)
            } else if u < p_vlm + p_vit {
                -r.random_range(0.25..0.5)
            } else {
                r.random_range(-0.15..0.15)
            };
            records.push(AdvantageRecord::new(&format!("p{s:05}"), seed, (base + delta).clamp(0.0, 1.0), base));
        }
    }
    let rep = win_count(&records, tau).map_err(e)?;
    let n = records.len() as u64;
    let (lo_v, hi_v) = binomial_99(n, p_vlm);
    let (lo_t, hi_t) = binomial_99(n, p_vit);
    let in_range = |x: usize, lo: u64, hi: u64| (lo..=hi).contains(&(x as u64));
    check(in_range(rep.vlm_wins, lo_v, hi_v) && in_range(rep.vit_wins, lo_t, hi_t), || {
        format!("planted: vlm {} in [{lo_v}, {hi_v}], vit {} in [{lo_t}, {hi_t}]", rep.vlm_wins, rep.vit_wins)
    })?;
    // Benchmark failure tails: a failing fast policy hands the win to the
    // slow one and vice versa.
    let recs = advantage_records(set, MetricVersion::V1, &KernelConfig::default()).map_err(e)?;
    let b = win_count(&recs, tau).map_err(e)?;
    let nb = recs.len() as u64;
    let (lo_bv, hi_bv) = binomial_99(nb, set.spec.fast.failure_rate);
    let (lo_bt, hi_bt) = binomial_99(nb, set.spec.slow.failure_rate);
    check(in_range(b.vlm_wins, lo_bv, hi_bv) && in_range(b.vit_wins, lo_bt, hi_bt), || {
        format!("benchmark: vlm {} in [{lo_bv}, {hi_bv}], vit {} in [{lo_bt}, {hi_bt}]", b.vlm_wins, b.vit_wins)
    })?;
    Ok(format!(
        "planted {}/{} in [{lo_v},{hi_v}]/[{lo_t},{hi_t}] of {n}; benchmark {}/{} in [{lo_bv},{hi_bv}]/[{lo_bt},{hi_bt}] of {nb}",
        rep.vlm_wins, rep.vit_wins, b.vlm_wins, b.vit_wins
    ))
}

// 14 ---------------------------------------------------------------------

fn read_all(dir: &std::path::Path, files: &[String]) -> Vec<(String, Vec<u8>)> {
    files.iter().map(|f| (f.clone(), std::fs::read(dir.join(f)).unwrap())).collect()
}

fn c14_determinism() -> Outcome {
    let mut checked = Vec::new();
    let twice = |name: &str, f: &dyn Fn() -> Result<String, String>, checked: &mut Vec<String>| -> Result<(), String> {
        let (a, b) = (f()?, f()?);
        check(a == b, || format!("{name} differs between runs"))?;
        checked.push(name.to_string());
        Ok(())
    };
    twice(
        "gen-features",
        &|| {
            let (p, _) = gen_paired_features(&planted(14, 300)).map_err(e)?;
            Ok(dualdrive::features::write_features(&p.x) + &dualdrive::features::write_features(&p.y))
        },
        &mut checked,
    )?;
    let spec = BenchmarkSpec {
        n_scenes: 40,
        scene_seed: 14,
        ..Default::default()
    };
    let (d1, d2) = (tempfile::tempdir().map_err(e)?, tempfile::tempdir().map_err(e)?);
    let f1 = gen_benchmark(&spec).map_err(e)?.write_dir(d1.path()).map_err(e)?;
    let f2 = gen_benchmark(&spec).map_err(e)?.write_dir(d2.path()).map_err(e)?;
    check(f1 == f2 && read_all(d1.path(), &f1) == read_all(d2.path(), &f2), || "gen-benchmark artifacts differ".into())?;
    checked.push("gen-benchmark".into());
    let (pair, _) = gen_paired_features(&planted(15, 400)).map_err(e)?;
    let ds = StandardizedPair::fit(&pair).map_err(e)?;
    twice(
        "sae-train",
        &|| {
            let cfg = TrainConfig { epochs: 5, ..sae_cfg() };
            let (m, h) = sae_train(&ds, &SaeLossWeights::default(), &cfg).map_err(e)?;
            Ok(dualdrive::sae::SaeCheckpoint::new(&m, ds.std_x.clone(), ds.std_y.clone()).to_json() + &h.to_csv())
        },
        &mut checked,
    )?;
    let x = gauss(16, 1, 200, 6);
    let labels: Vec<Option<bool>> = (0..200).map(|i| Some(x[(i, 0)] + 0.3 * x[(i, 1)] > 0.0)).collect();
    twice(
        "gate-train",
        &|| {
            let m = learned_gate_train(&x, &labels, &GateTrainConfig { epochs: 5, ..Default::default() }).map_err(e)?;
            serde_json::to_string(&m).map_err(e)
        },
        &mut checked,
    )?;
    let set = gen_benchmark(&BenchmarkSpec {
        n_scenes: 20,
        scene_seed: 17,
        ..Default::default()
    })
    .map_err(e)?;
    let samples: Vec<ScorerSample> = set
        .scenarios
        .iter()
        .map(|sc| {
            let s = dualdrive::scene::compute_subscores(&sc.fast[0], &sc.scene, MetricVersion::V1, &KernelConfig::default()).unwrap();
            ScorerSample::new(&sc.fast[0], &sc.scene, &s).unwrap()
        })
        .collect();
    twice(
        "scorer-train",
        &|| {
            let cfg = ScorerConfig { epochs: 3, d_score: 16, ..Default::default() };
            let (m, h) = scorer_train(&samples, &cfg).map_err(e)?;
            Ok(serde_json::to_string(&m).map_err(e)? + &serde_json::to_string(&h).map_err(e)?)
        },
        &mut checked,
    )?;
    twice(
        "dual-sweep",
        &|| {
            let entries = route_table(&set, 0, &GroundTruthScorer::default(), MetricVersion::V1, &KernelConfig::default()).map_err(e)?;
            Ok(sweep_table(&entries, &[0.0, 0.5, 0.9, 1.0], &DualConfig::default()).map_err(e)?.to_csv())
        },
        &mut checked,
    )?;
    Ok(format!("byte-identical re-runs: {}", checked.join(", ")))
}

// ------------------------------------------------------------------------

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match res {
        Ok(msg) => {
            println!("PASS {id:>2} {name}: {msg} ({secs:.1}s)");
            true
        }
        Err(msg) => {
            println!("FAIL {id:>2} {name}: {msg} ({secs:.1}s)");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and similar probes expect no work.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let bench = gen_benchmark(&BenchmarkSpec::default());
    let mut models = Vec::new();
    let mut results = vec![
        run(1, "metric exactness", c1_metrics),
        run(2, "CKA invariances", c2_cka),
        run(3, "CCA planted-rank recovery", c3_cca),
        run(4, "Procrustes exact alignment", c4_procrustes),
        run(5, "SAE gradient check", c5_sae_gradient),
        run(6, "SAE interchangeability direction", || c6_interchangeability(&mut models)),
        run(7, "shuffled-pair control", || c7_shuffle_control(&mut models)),
        run(8, "variance-attribution identity", || c8_variance(&models)),
    ];
    match &bench {
        Ok(set) => {
            results.push(run(9, "gate bounds", || c9_gates(set)));
            results.push(run(10, "oracle dominance", || c10_oracle(set)));
            results.push(run(11, "perfect-scorer equivalence", || c11_perfect_scorer(set)));
            results.push(run(12, "dual-route monotonicity and cost algebra", || c12_dual_route(set)));
            results.push(run(13, "win-count calibration", || c13_wins(set)));
        }
        Err(err) => {
            for (id, name) in [
                (9, "gate bounds"),
                (10, "oracle dominance"),
                (11, "perfect-scorer equivalence"),
                (12, "dual-route monotonicity and cost algebra"),
                (13, "win-count calibration"),
            ] {
                println!("FAIL {id:>2} {name}: benchmark generation failed: {err}");
                results.push(false);
            }
        }
    }
    results.push(run(14, "determinism", c14_determinism));
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
