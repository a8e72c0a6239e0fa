//! Acceptance gate. One test per shipping criterion, named `criterion_NN_*`;
//! the harness line per test is the pass/fail signal, and each test also
//! prints a `criterion NN PASS` line with its measured margin (visible under
//! `--nocapture`). Oracles here are coded independently of the library paths
//! they check: dense matrix math, plain-arithmetic forwards, and closed-form
//! references live in this file.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use smoothmil_core::autodiff::Tape;
use smoothmil_core::data::{
    generate_synthetic, prepare_bags, Bag, Geometry, PreparedBag, Split, SynthSpec,
};
use smoothmil_core::graph::{gaussian_prior_kl_jittered, AdjacencyGraph};
use smoothmil_core::metrics::{attention_map, attention_variance_diagnostic, auroc};
use smoothmil_core::model::{
    BagTransform, MilModel, ModelVariant, PosteriorKind, TransformerDims,
};
use smoothmil_core::objective::{bag_loss, LambdaPolicy, LambdaSchedule};
use smoothmil_core::tensor::Tensor;
use smoothmil_core::train::{fit, score_split, TrainConfig};

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn chain_bag(rng: &mut ChaCha12Rng, id: &str, n: usize, p: usize, label: u8) -> PreparedBag {
    let features: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let bag = Bag::new(
        id.to_string(),
        label,
        Tensor::matrix(n, p, features).unwrap(),
        (0..n as i32).collect(),
        1,
        None,
    )
    .unwrap();
    prepare_bags(vec![bag], Geometry::Chain.default_policy())
        .unwrap()
        .remove(0)
}

fn all_variants(p: usize, d: usize, d_f: usize) -> Vec<ModelVariant> {
    let mut out = Vec::new();
    for bag_transform in [BagTransform::Abmil, BagTransform::TAbmil] {
        for posterior in [PosteriorKind::DiracDelta, PosteriorKind::DiagGaussian] {
            out.push(ModelVariant {
                bag_transform,
                posterior,
                input_dim: p,
                embed_dim: d,
                attention_dim: d_f,
                transformer: TransformerDims {
                    layers: 1,
                    heads: 2,
                    d_qk: 4,
                    d_v: d,
                },
            });
        }
    }
    out
}

/// Relative error with a floor that turns near-zero comparisons absolute.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// --- 1 -----------------------------------------------------------------

#[test]
fn criterion_01_gradients_match_finite_differences_on_all_variants() {
    let t0 = Instant::now();
    let (n, p) = (4, 5);
    let h = 1e-5;
    let mut worst = 0.0f64;

    for (k, variant) in all_variants(p, 6, 3).into_iter().enumerate() {
        let mut r = rng(900 + k as u64);
        let prepared = chain_bag(&mut r, &format!("g{}", k), n, p, (k % 2) as u8);
        let noise: Option<Vec<f64>> = match variant.posterior {
            PosteriorKind::DiagGaussian => {
                Some((0..n).map(|_| r.gen_range(-1.2..1.2)).collect())
            }
            PosteriorKind::DiracDelta => None,
        };
        let model = MilModel::init(variant, 77 + k as u64).unwrap();

        let loss_at = |m: &MilModel| -> f64 {
            let tape = Tape::new();
            let leases = m.lease(&tape, false);
            let (loss, _) =
                bag_loss(m, &tape, &leases, &prepared, 1.0, 1.0, noise.as_deref()).unwrap();
            loss.item().unwrap()
        };

        let tape = Tape::new();
        let leases = model.lease(&tape, true);
        let (loss, _) =
            bag_loss(&model, &tape, &leases, &prepared, 1.0, 1.0, noise.as_deref()).unwrap();
        loss.backward().unwrap();
        let grads = leases.gradients().unwrap();

        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let len = model.params.get(name).unwrap().len();
            let analytic = grads.get(name).unwrap().data().to_vec();
            for idx in 0..len {
                let mut plus = MilModel::from_parts(variant, model.params.clone()).unwrap();
                plus.params.get_mut(name).unwrap().data_mut()[idx] += h;
                let mut minus = MilModel::from_parts(variant, model.params.clone()).unwrap();
                minus.params.get_mut(name).unwrap().data_mut()[idx] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let err = rel_err(analytic[idx], fd, 1e-3);
                assert!(
                    err < 1e-4,
                    "variant {:?}/{:?} param {}[{}]: analytic {} vs fd {} (rel {})",
                    variant.bag_transform,
                    variant.posterior,
                    name,
                    idx,
                    analytic[idx],
                    fd,
                    err
                );
                worst = worst.max(err);
            }
        }
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 30.0, "gradient fidelity took {:.1}s (bound 30s)", dt);
    println!(
        "criterion 01 PASS: max relative gradient error {:.2e} (bound 1e-4) over 4 variants in {:.1}s",
        worst, dt
    );
}

// --- 2 -----------------------------------------------------------------

#[test]
fn criterion_02_dirichlet_energy_edge_sum_equals_quadratic_form() {
    let t0 = Instant::now();
    let mut r = rng(0x6772_6170);
    let mut worst = 0.0f64;

    for case in 0..100 {
        let n = r.gen_range(2..=20usize);
        let mut edges = Vec::new();
        for i in 0..n as u32 {
            for j in (i + 1)..n as u32 {
                if r.gen_bool(0.3) {
                    edges.push((i, j, r.gen_range(0.1..2.0)));
                }
            }
        }
        let graph = AdjacencyGraph::new(n, edges).unwrap();
        let f: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();

        // dense f' L f with L assembled here from the edge list
        let mut lap = vec![0.0; n * n];
        for &(i, j, w) in graph.edges() {
            let (i, j) = (i as usize, j as usize);
            lap[i * n + i] += w;
            lap[j * n + j] += w;
            lap[i * n + j] -= w;
            lap[j * n + i] -= w;
        }
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += f[i] * lap[i * n + j] * f[j];
            }
        }

        let edge_sum = graph.dirichlet_energy_value(&f).unwrap();
        let diff = (edge_sum - quad).abs();
        assert!(
            diff < 1e-10,
            "case {}: edge-sum {} vs quadratic {} (diff {})",
            case,
            edge_sum,
            quad,
            diff
        );
        worst = worst.max(diff);
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 5.0, "dual-form identity took {:.1}s (bound 5s)", dt);
    println!(
        "criterion 02 PASS: max |edge-sum - f'Lf| {:.2e} (bound 1e-10) over 100 graphs in {:.2}s",
        worst, dt
    );
}

// --- 3 -----------------------------------------------------------------

/// log det of a symmetric positive-definite matrix, local Cholesky.
fn logdet_spd(a: &[f64], n: usize) -> f64 {
    let mut l = vec![0.0; n * n];
    let mut logdet = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite");
                l[i * n + i] = s.sqrt();
                logdet += 2.0 * s.sqrt().ln();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    logdet
}

#[test]
fn criterion_03_gaussian_kl_matches_dense_oracle_under_jitter() {
    let t0 = Instant::now();
    let eps = 1e-3;
    let mut r = rng(0x6b6c_6f72);
    let mut worst = 0.0f64;

    // chains of length 2..6 and the 2x2 / 2x3 four-neighbor grids
    let mut shapes: Vec<(usize, Vec<(u32, u32, f64)>)> = Vec::new();
    for n in 2..=6usize {
        let chain = (0..n as u32 - 1).map(|i| (i, i + 1, 1.0)).collect();
        shapes.push((n, chain));
    }
    for (rows, cols) in [(2usize, 2usize), (2, 3)] {
        let mut edges = Vec::new();
        for a in 0..rows as u32 {
            for b in 0..cols as u32 {
                let id = a * cols as u32 + b;
                if b + 1 < cols as u32 {
                    edges.push((id, id + 1, 1.0));
                }
                if a + 1 < rows as u32 {
                    edges.push((id, id + cols as u32, 1.0));
                }
            }
        }
        shapes.push((rows * cols, edges));
    }

    for case in 0..50 {
        let (n, edges) = shapes[case % shapes.len()].clone();
        let graph = AdjacencyGraph::new(n, edges).unwrap();
        let mu: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let sigma2: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..2.0)).collect();

        // precision of the jittered prior, assembled here: 2L + eps I
        let mut prec = vec![0.0; n * n];
        for &(i, j, w) in graph.edges() {
            let (i, j) = (i as usize, j as usize);
            prec[i * n + i] += 2.0 * w;
            prec[j * n + j] += 2.0 * w;
            prec[i * n + j] -= 2.0 * w;
            prec[j * n + i] -= 2.0 * w;
        }
        for i in 0..n {
            prec[i * n + i] += eps;
        }

        // dense KL( N(mu, diag sigma2) || N(0, prec^-1) )
        let mut trace = 0.0;
        for i in 0..n {
            trace += prec[i * n + i] * sigma2[i];
        }
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += mu[i] * prec[i * n + j] * mu[j];
            }
        }
        let logdet_sq: f64 = sigma2.iter().map(|s| s.ln()).sum();
        let dense = 0.5 * (trace + quad - n as f64 - logdet_spd(&prec, n) - logdet_sq);

        let implemented = gaussian_prior_kl_jittered(&graph, &mu, &sigma2, eps).unwrap();
        let diff = (implemented - dense).abs();
        assert!(
            diff < 1e-8,
            "case {} (n={}): implemented {} vs dense {} (diff {})",
            case,
            n,
            implemented,
            dense,
            diff
        );
        worst = worst.max(diff);
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 5.0, "kl oracle took {:.1}s (bound 5s)", dt);
    println!(
        "criterion 03 PASS: max |closed form - dense KL| {:.2e} (bound 1e-8) over 50 cases in {:.2}s",
        worst, dt
    );
}

// --- 4 -----------------------------------------------------------------

/// Plain-arithmetic deterministic smoothness-regularized objective: embedding,
/// attention, pooling, classifier, Bernoulli NLL, plus the chain-graph
/// energy of the attention logits. No shared code with the taped loss.
fn deterministic_objective(model: &MilModel, bag: &Bag) -> f64 {
    let p = model.variant.input_dim;
    let d = model.variant.embed_dim;
    let d_f = model.variant.attention_dim;
    let n = bag.n_instances();
    let get = |name: &str| model.params.get(name).unwrap().data();
    let (w_e, b_e) = (get("embed.w"), get("embed.b"));
    let (w_a, v_a) = (get("att_mu.w"), get("att_mu.v"));
    let (w_c, b_c) = (get("cls.w"), get("cls.b"));

    let mut h = vec![0.0; n * d];
    for i in 0..n {
        for dd in 0..d {
            let mut z = b_e[dd];
            for pp in 0..p {
                z += bag.features.data()[i * p + pp] * w_e[pp * d + dd];
            }
            h[i * d + dd] = z.tanh();
        }
    }
    let mut mu = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for ff in 0..d_f {
            let mut z = 0.0;
            for dd in 0..d {
                z += h[i * d + dd] * w_a[dd * d_f + ff];
            }
            acc += z.tanh() * v_a[ff];
        }
        mu[i] = acc;
    }
    let max = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = mu.iter().map(|&m| (m - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut logit = b_c[0];
    for dd in 0..d {
        let mut z = 0.0;
        for i in 0..n {
            z += weights[i] / total * h[i * d + dd];
        }
        logit += z * w_c[dd];
    }
    let nll = if bag.label == 1 {
        (1.0 + (-logit).exp()).ln()
    } else {
        (1.0 + logit.exp()).ln()
    };

    // chain energy: adjacent iff coordinates differ by 1, inverse
    // feature-distance edge weights
    let mut energy = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if (bag.coords[i] - bag.coords[j]).abs() == 1 {
                let dist: f64 = (0..p)
                    .map(|k| {
                        (bag.features.data()[i * p + k] - bag.features.data()[j * p + k]).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt();
                energy += (mu[i] - mu[j]).powi(2) / (1.0 + dist);
            }
        }
    }
    nll + energy
}

#[test]
fn criterion_04_dirac_loss_equals_deterministic_objective() {
    let t0 = Instant::now();
    let mut r = rng(0x6469_7261);
    let mut worst = 0.0f64;

    for case in 0..100u64 {
        let n = r.gen_range(3..=8usize);
        let variant = ModelVariant {
            bag_transform: BagTransform::Abmil,
            posterior: PosteriorKind::DiracDelta,
            input_dim: 5,
            embed_dim: 7,
            attention_dim: 4,
            transformer: TransformerDims::default(),
        };
        let model = MilModel::init(variant, 4000 + case).unwrap();
        let prepared = chain_bag(&mut r, &format!("d{}", case), n, 5, (case % 2) as u8);

        let tape = Tape::new();
        let leases = model.lease(&tape, false);
        let (_, breakdown) =
            bag_loss(&model, &tape, &leases, &prepared, 1.0, 1.0, None).unwrap();
        let oracle = deterministic_objective(&model, &prepared.bag);

        let diff = (breakdown.total - oracle).abs();
        assert!(
            diff < 1e-10,
            "case {}: taped {} vs deterministic objective {} (diff {})",
            case,
            breakdown.total,
            oracle,
            diff
        );
        worst = worst.max(diff);
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "dirac equivalence took {:.1}s (bound 10s)", dt);
    println!(
        "criterion 04 PASS: max |dirac loss - deterministic objective| {:.2e} (bound 1e-10) over 100 bags in {:.2}s",
        worst, dt
    );
}

// --- 5 -----------------------------------------------------------------

#[test]
fn criterion_05_cyclical_schedule_matches_closed_form_at_every_step() {
    let total = 100;
    let schedule = LambdaSchedule::new(LambdaPolicy::Cyclical, total).unwrap();

    // closed form: 5 cycles over the budget, linear ramp over the first 80%
    // of each cycle, clamped at 1 for the rest
    let cycle = total / 5;
    let ramp = (0.8 * cycle as f64).floor() as usize;
    for step in 0..total {
        let expected = ((step % cycle) as f64 / ramp as f64).min(1.0);
        let got = schedule.at(step);
        assert!(
            got == expected,
            "step {}: schedule {} vs closed form {}",
            step,
            got,
            expected
        );
    }
    assert_eq!(schedule.at(0), 0.0);
    assert_eq!(schedule.at(8), 0.5);
    for step in 16..20 {
        assert_eq!(schedule.at(step), 1.0);
    }
    assert_eq!(schedule.at(20), 0.0);

    println!("criterion 05 PASS: cyclical schedule exact at all 100 steps");
}

// --- 6 -----------------------------------------------------------------

/// Fixed benchmark dataset: one seeded draw, shared by every run seed.
/// Positive bags carry one contiguous chain region of 6..=10 shifted
/// instances out of 20..=40, with heavy class-conditional overlap
/// (shift 0.45 at unit noise), so bag evidence is spatially coherent but
/// individually weak — the regime graph smoothing is meant for.
const BENCHMARK_DATA_SEED: u64 = 0;

fn benchmark_splits() -> (Vec<PreparedBag>, Vec<PreparedBag>, Vec<PreparedBag>) {
    let spec = SynthSpec {
        train_bags: 200,
        val_bags: 50,
        test_bags: 100,
        instance_range: (20, 40),
        feature_dim: 32,
        positive_fraction: 0.5,
        region_range: (6, 10),
        mean_negative: 0.0,
        mean_positive: 0.45,
        stddev: 1.0,
        geometry: Geometry::Chain,
    };
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (split, bag) in generate_synthetic(&spec, BENCHMARK_DATA_SEED).unwrap() {
        match split {
            Split::Train => train.push(bag),
            Split::Val => val.push(bag),
            Split::Test => test.push(bag),
        }
    }
    let policy = Geometry::Chain.default_policy();
    (
        prepare_bags(train, policy).unwrap(),
        prepare_bags(val, policy).unwrap(),
        prepare_bags(test, policy).unwrap(),
    )
}

fn benchmark_arm(
    lambda: LambdaPolicy,
    seed: u64,
    splits: &(Vec<PreparedBag>, Vec<PreparedBag>, Vec<PreparedBag>),
) -> (f64, f64) {
    let variant = ModelVariant {
        bag_transform: BagTransform::Abmil,
        posterior: PosteriorKind::DiagGaussian,
        input_dim: 32,
        embed_dim: 64,
        attention_dim: 16,
        transformer: TransformerDims::default(),
    };
    let config = TrainConfig {
        epochs: 200,
        base_lr: 1e-3,
        batch_size: 8,
        predict_samples: 100,
        lambda,
        ..TrainConfig::default()
    };
    let model = MilModel::init(variant, seed).unwrap();
    let result = fit(model, &splits.0, &splits.1, &config, seed).unwrap();
    let scores = score_split(&result.model, &splits.2, 100, 0xe5a1).unwrap();
    let labels: Vec<u8> = splits.2.iter().map(|b| b.bag.label).collect();
    let test_auroc = auroc(&scores, &labels).unwrap();
    let mut energy = 0.0;
    for b in &splits.2 {
        let (_, post) = result.model.posterior_moments(&b.bag).unwrap();
        energy += b.graph.dirichlet_energy_value(&post.mu).unwrap();
    }
    (test_auroc, energy / splits.2.len() as f64)
}

#[test]
fn criterion_06_desk_benchmark_cyclical_vs_unregularized() {
    let splits = benchmark_splits();
    let seeds: Vec<u64> = (0..5).collect();
    let mut cyc = Vec::new();
    let mut zero = Vec::new();

    for &seed in &seeds {
        let t0 = Instant::now();
        cyc.push(benchmark_arm(LambdaPolicy::Cyclical, seed, &splits));
        let cyc_elapsed = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        zero.push(benchmark_arm(LambdaPolicy::Constant(0.0), seed, &splits));
        let zero_elapsed = t1.elapsed().as_secs_f64();
        assert!(
            cyc_elapsed < 600.0 && zero_elapsed < 600.0,
            "seed {}: arm runtimes {:.0}s / {:.0}s exceed the 10-minute bound",
            seed,
            cyc_elapsed,
            zero_elapsed
        );
        println!(
            "  seed {}: cyclical auroc {:.4} energy {:.4} [{:.0}s] | lambda-0 auroc {:.4} energy {:.4} [{:.0}s]",
            seed, cyc.last().unwrap().0, cyc.last().unwrap().1, cyc_elapsed,
            zero.last().unwrap().0, zero.last().unwrap().1, zero_elapsed
        );
    }

    for (i, (c, z)) in cyc.iter().zip(&zero).enumerate() {
        // (a) absolute bar on every run seed
        assert!(
            c.0 >= 0.90,
            "(a) seed {}: cyclical test AUROC {:.4} < 0.90",
            i,
            c.0
        );
        // (b) per-seed no-degradation bound vs the unregularized baseline
        assert!(
            c.0 >= z.0 - 0.005,
            "(b) seed {}: cyclical {:.4} below lambda-0 {:.4} by more than 0.005",
            i,
            c.0,
            z.0
        );
        // (c) smoothing observable: mean test energy strictly lower
        assert!(
            c.1 < z.1,
            "(c) seed {}: cyclical energy {:.4} not strictly below {:.4}",
            i,
            c.1,
            z.1
        );
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cyc_auroc = mean(&cyc.iter().map(|r| r.0).collect::<Vec<_>>());
    let zero_auroc = mean(&zero.iter().map(|r| r.0).collect::<Vec<_>>());
    assert!(cyc_auroc >= 0.90 && cyc_auroc >= zero_auroc - 0.005);

    println!(
        "criterion 06 PASS: cyclical mean test AUROC {:.4} (bar 0.90) vs lambda-0 {:.4} (slack -0.005), all 5 seeds individually; attention energy lower on all 5",
        cyc_auroc, zero_auroc
    );
}

// --- 7 -----------------------------------------------------------------

#[test]
fn criterion_07_monte_carlo_estimator_converges_within_sampling_error() {
    let spec = SynthSpec {
        train_bags: 10,
        val_bags: 0,
        test_bags: 0,
        instance_range: (15, 30),
        feature_dim: 8,
        positive_fraction: 0.5,
        region_range: (3, 6),
        mean_negative: 0.0,
        mean_positive: 1.0,
        stddev: 1.0,
        geometry: Geometry::Chain,
    };
    let bags: Vec<Bag> = generate_synthetic(&spec, 0x5359)
        .unwrap()
        .into_iter()
        .map(|(_, b)| b)
        .collect();
    let variant = ModelVariant {
        bag_transform: BagTransform::Abmil,
        posterior: PosteriorKind::DiagGaussian,
        input_dim: 8,
        embed_dim: 16,
        attention_dim: 8,
        transformer: TransformerDims::default(),
    };
    let model = MilModel::init(variant, 0x4d43).unwrap();

    let mut r = rng(0x7374_6430);
    for (i, bag) in bags.iter().enumerate() {
        let p_small = model.predict_bag(bag, 10_000, 1000 + i as u64).unwrap();
        let p_large = model.predict_bag(bag, 100_000, 9000 + i as u64).unwrap();

        // empirical per-sample std from an independent draw
        let (h, post) = model.posterior_moments(bag).unwrap();
        let n = bag.n_instances();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let noise: Vec<f64> = (0..n).map(|_| standard_normal(&mut r)).collect();
            let f = post.sample(&noise).unwrap();
            let p = model.pooled_probability(&h, &f).unwrap();
            sum += p;
            sum_sq += p * p;
        }
        let mean = sum / draws as f64;
        let std = ((sum_sq / draws as f64 - mean * mean).max(0.0)).sqrt();
        let bound = 3.0 * std / (draws as f64).sqrt();

        let diff = (p_small - p_large).abs();
        assert!(
            diff < bound,
            "bag {}: |S=1e4 - S=1e5| = {:.3e} exceeds 3*std/sqrt(1e4) = {:.3e}",
            i,
            diff,
            bound
        );
    }

    println!(
        "criterion 07 PASS: S=1e4 vs S=1e5 within 3*empirical-std/sqrt(1e4) on all 10 bags"
    );
}

/// Box-Muller standard normal (local copy so the empirical std draw shares
/// no code with the predictor under test).
fn standard_normal(r: &mut ChaCha12Rng) -> f64 {
    loop {
        let u: f64 = r.gen_range(f64::MIN_POSITIVE..1.0);
        let v: f64 = r.gen_range(0.0..std::f64::consts::TAU);
        let z = (-2.0 * u.ln()).sqrt() * v.cos();
        if z.is_finite() {
            return z;
        }
    }
}

// --- 8 -----------------------------------------------------------------

#[test]
fn criterion_08_train_is_bit_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let write_cfg = |out: &Path| {
        let cfg = serde_json::json!({
            "data": {"synthetic": {
                "train_bags": 16, "val_bags": 6, "test_bags": 6,
                "instance_range": [8, 12], "feature_dim": 6,
                "positive_fraction": 0.5, "region_range": [2, 4],
                "mean_negative": 0.0, "mean_positive": 1.0, "stddev": 1.0,
                "geometry": "chain"
            }},
            "model": {
                "bag_transform": "abmil", "posterior": "diag_gaussian",
                "input_dim": 6, "embed_dim": 12, "attention_dim": 6
            },
            "objective": {"lambda": "cyclical"},
            "train": {"epochs": 10, "base_lr": 1e-3, "predict_samples": 16},
            "eval": {"predict_samples": 16},
            "out_dir": out,
            "seeds": [5]
        });
        let path = out.with_extension("json");
        fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        path
    };

    let mut artifacts: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let cfg = write_cfg(&out);
        let result = Command::new(env!("CARGO_BIN_EXE_smoothmil"))
            .args(["--config", cfg.to_str().unwrap(), "train"])
            .output()
            .unwrap();
        assert!(result.status.success(), "{:?}", result);
        let seed_dir = out.join("seed-5");
        artifacts.push((
            fs::read(seed_dir.join("history.csv")).unwrap(),
            fs::read(seed_dir.join("model.psac")).unwrap(),
            fs::read(seed_dir.join("steps.csv")).unwrap(),
        ));
    }

    assert_eq!(artifacts[0].0, artifacts[1].0, "history CSVs differ");
    assert_eq!(artifacts[0].1, artifacts[1].1, "checkpoints differ");
    assert_eq!(artifacts[0].2, artifacts[1].2, "step logs differ");
    println!(
        "criterion 08 PASS: two train invocations produced bit-identical history ({} bytes) and checkpoint ({} bytes)",
        artifacts[0].0.len(),
        artifacts[0].1.len()
    );
}

// --- 9 -----------------------------------------------------------------

#[test]
fn criterion_09_bag_probability_invariant_under_instance_permutation() {
    let (n, p) = (9, 5);
    let mut worst_prob = 0.0f64;
    let mut worst_map = 0.0f64;

    for (k, variant) in all_variants(p, 6, 3).into_iter().enumerate() {
        let mut r = rng(7700 + k as u64);
        let original = chain_bag(&mut r, &format!("p{}", k), n, p, 1).bag;

        // a fixed non-trivial permutation
        let perm: Vec<usize> = (0..n).map(|i| (i * 4 + 2) % n).collect();
        let mut feat = vec![0.0; n * p];
        let mut coords = vec![0; n];
        for (dst, &src) in perm.iter().enumerate() {
            feat[dst * p..(dst + 1) * p]
                .copy_from_slice(&original.features.data()[src * p..(src + 1) * p]);
            coords[dst] = original.coords[src];
        }
        let permuted = Bag::new(
            "perm".into(),
            original.label,
            Tensor::matrix(n, p, feat).unwrap(),
            coords,
            1,
            None,
        )
        .unwrap();

        let model = MilModel::init(variant, 31_000 + k as u64).unwrap();
        let (h_o, post_o) = model.posterior_moments(&original).unwrap();
        let (h_p, post_p) = model.posterior_moments(&permuted).unwrap();

        // moments permute consistently
        for (dst, &src) in perm.iter().enumerate() {
            let d_mu = (post_p.mu[dst] - post_o.mu[src]).abs();
            assert!(d_mu < 1e-9, "variant {}: mu moved by {}", k, d_mu);
            worst_map = worst_map.max(d_mu);
            if let (Some(s_p), Some(s_o)) = (&post_p.sigma2, &post_o.sigma2) {
                let d_s = (s_p[dst] - s_o[src]).abs();
                assert!(d_s < 1e-9, "variant {}: sigma2 moved by {}", k, d_s);
                worst_map = worst_map.max(d_s);
            }
        }

        // deterministic bag probability at the posterior mean
        let p_o = model.pooled_probability(&h_o, &post_o.mu).unwrap();
        let p_p = model.pooled_probability(&h_p, &post_p.mu).unwrap();
        assert!(
            (p_o - p_p).abs() < 1e-9,
            "variant {}: plug-in probability {} vs {}",
            k,
            p_o,
            p_p
        );
        worst_prob = worst_prob.max((p_o - p_p).abs());

        match variant.posterior {
            PosteriorKind::DiracDelta => {
                // the user-facing predictor is deterministic here
                let q_o = model.predict_bag(&original, 3, 1).unwrap();
                let q_p = model.predict_bag(&permuted, 3, 1).unwrap();
                assert!((q_o - q_p).abs() < 1e-9);
                worst_prob = worst_prob.max((q_o - q_p).abs());
            }
            PosteriorKind::DiagGaussian => {
                // Monte-Carlo draws with permutation-matched noise
                for draw in 0..3 {
                    let noise: Vec<f64> =
                        (0..n).map(|i| 0.3 * (i as f64) - 0.7 + draw as f64).collect();
                    let matched: Vec<f64> = perm.iter().map(|&src| noise[src]).collect();
                    let f_o = post_o.sample(&noise).unwrap();
                    let f_p = post_p.sample(&matched).unwrap();
                    let s_o = model.pooled_probability(&h_o, &f_o).unwrap();
                    let s_p = model.pooled_probability(&h_p, &f_p).unwrap();
                    assert!(
                        (s_o - s_p).abs() < 1e-9,
                        "variant {}: matched-noise sample {} vs {}",
                        k,
                        s_o,
                        s_p
                    );
                    worst_prob = worst_prob.max((s_o - s_p).abs());
                }
            }
        }

        // exported attention map permutes with the instances
        let map_o = attention_map(&model, &original).unwrap();
        let map_p = attention_map(&model, &permuted).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for (a, b) in [
                (map_p.mean_raw[dst], map_o.mean_raw[src]),
                (map_p.var_raw[dst], map_o.var_raw[src]),
                (map_p.mean_norm[dst], map_o.mean_norm[src]),
                (map_p.var_norm[dst], map_o.var_norm[src]),
            ] {
                assert!((a - b).abs() < 1e-9, "variant {}: map field moved", k);
                worst_map = worst_map.max((a - b).abs());
            }
            assert_eq!(map_p.coords[dst], map_o.coords[src]);
        }
    }

    println!(
        "criterion 09 PASS: probabilities invariant to {:.1e} and maps permutation-consistent to {:.1e} (bound 1e-9) on all 4 variants",
        worst_prob, worst_map
    );
}

// --- 10 ----------------------------------------------------------------

#[test]
fn criterion_10_attention_variance_diagnostic_is_reported() {
    // a short real run so the diagnostic reflects trained attention
    let spec = SynthSpec {
        train_bags: 30,
        val_bags: 10,
        test_bags: 20,
        instance_range: (10, 16),
        feature_dim: 8,
        positive_fraction: 0.5,
        region_range: (3, 5),
        mean_negative: 0.0,
        mean_positive: 1.2,
        stddev: 1.0,
        geometry: Geometry::Chain,
    };
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (split, bag) in generate_synthetic(&spec, 0xd1a6).unwrap() {
        match split {
            Split::Train => train.push(bag),
            Split::Val => val.push(bag),
            Split::Test => test.push(bag),
        }
    }
    let policy = Geometry::Chain.default_policy();
    let train = prepare_bags(train, policy).unwrap();
    let val = prepare_bags(val, policy).unwrap();
    let test = prepare_bags(test, policy).unwrap();

    let variant = ModelVariant {
        bag_transform: BagTransform::Abmil,
        posterior: PosteriorKind::DiagGaussian,
        input_dim: 8,
        embed_dim: 16,
        attention_dim: 8,
        transformer: TransformerDims::default(),
    };
    let config = TrainConfig {
        epochs: 15,
        base_lr: 1e-3,
        batch_size: 8,
        predict_samples: 32,
        lambda: LambdaPolicy::Constant(0.5),
        ..TrainConfig::default()
    };
    let model = MilModel::init(variant, 0xd1a6).unwrap();
    let result = fit(model, &train, &val, &config, 0xd1a6).unwrap();

    let mut pairs = Vec::new();
    for b in &test {
        let labels = b.bag.instance_labels.clone().expect("synthetic labels");
        pairs.push((attention_map(&result.model, &b.bag).unwrap(), labels));
    }
    let diag = attention_variance_diagnostic(&pairs).unwrap();

    assert!(
        diag.mispredicted_count + diag.correct_count > 0,
        "diagnostic saw no instances"
    );
    for v in [diag.mispredicted_mean_var, diag.correct_mean_var]
        .into_iter()
        .flatten()
    {
        assert!(v.is_finite() && v >= 0.0, "group mean {} not finite", v);
    }

    // reported, never gated: no ordering is asserted between the groups
    println!(
        "criterion 10 PASS (reported): mean normalized attention variance mispredicted {} ({} instances) vs correct {} ({} instances)",
        diag.mispredicted_mean_var
            .map(|v| format!("{:.4}", v))
            .unwrap_or_else(|| "n/a".into()),
        diag.mispredicted_count,
        diag.correct_mean_var
            .map(|v| format!("{:.4}", v))
            .unwrap_or_else(|| "n/a".into()),
        diag.correct_count
    );
}
