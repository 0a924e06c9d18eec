//! End-to-end acceptance checks. Each criterion prints one line:
//!
//! ```text
//! [PASS] 1 inference oracle: ...
//! ```
//!
//! Criterion 8 needs the CoNLL-2000 chunking data; point
//! `BCRF_CONLL2000_DIR` at a directory holding `train.txt` and `test.txt`
//! (optionally gzipped) to run it. Without it the line reads SKIP.

#![allow(clippy::needless_range_loop)]

mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use bcrf::chain_crf::{forward_backward, log_sum_exp, viterbi, ChainModel};
use bcrf::corpus::{read_conll, Dataset, Sentence, Token};
use bcrf::features::{FeatureIndex, SparseVector, TemplateSet};
use bcrf::trainer::{compile, learning_rate, mean_gradient, scaled_update, TrainConfig, TrainState, Trainer};
use bcrf::transforms::{TableSpec, Transform, TransformKind, TransformSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Default hyperparameters: zero-slope 10 for all but arctan, which is 1/sqrt(0.1).
fn reference_updates() -> Vec<TransformSpec> {
    vec![
        TransformSpec::identity(),
        TransformSpec::new(TransformKind::RationalG1, 0.1),
        TransformSpec::new(TransformKind::ArctanG1, 0.1),
        TransformSpec::new(TransformKind::ErfG2, 5.0 * PI.sqrt()),
        TransformSpec::new(TransformKind::GdG3, 10.0),
    ]
}

// ---------------------------------------------------------------- 1

fn random_instance(rng: &mut ChaCha8Rng) -> (Sentence, Arc<FeatureIndex>) {
    let pool = ["B-NP", "I-NP", "O"];
    let num_labels = rng.gen_range(1..=3);
    let tags = &pool[..num_labels];
    let words = ["a", "b", "c"];
    let len = rng.gen_range(1..=4);
    let tokens = (0..len)
        .map(|_| Token::new(*words.choose(rng).unwrap(), "X", *tags.choose(rng).unwrap()).unwrap())
        .collect();
    let sentence = Sentence::new(tokens).unwrap();
    // A second sentence guarantees every label is in the alphabet.
    let cover = Sentence::new(tags.iter().map(|t| Token::new("z", "Y", *t).unwrap()).collect()).unwrap();
    let data = Dataset::new(vec![sentence.clone(), cover]).unwrap();
    (sentence, Arc::new(FeatureIndex::build(&data, TemplateSet::Small)))
}

fn all_labelings(len: usize, num_labels: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..num_labels).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

fn inference_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_log, mut worst_prob) = (0.0f64, 0.0f64);
    let mut viterbi_mismatch = 0;
    for _ in 0..200 {
        let (sentence, index) = random_instance(&mut rng);
        let weights = (0..index.dim()).map(|_| rng.gen_range(-2.0..=2.0)).collect();
        let model = ChainModel::from_weights(index.clone(), weights).unwrap();
        let inst = model.compile(&sentence);
        let (len, l) = (sentence.len(), index.num_labels());

        // Brute force straight from the global feature map.
        let ys = all_labelings(len, l);
        let scores: Vec<f64> = ys
            .iter()
            .map(|y| index.global_features(&inst, y).dot(model.weights()))
            .collect();
        let log_z = log_sum_exp(scores.iter().copied());
        let probs: Vec<f64> = scores.iter().map(|s| (s - log_z).exp()).collect();

        let lattice = model.lattice(&inst);
        let post = forward_backward(&lattice);
        worst_log = worst_log.max((post.log_z() - log_z).abs());

        for t in 0..len {
            for y in 0..l {
                let brute: f64 = ys.iter().zip(&probs).filter(|(ys, _)| ys[t] == y).map(|(_, p)| p).sum();
                worst_prob = worst_prob.max((post.unary_marginals(t)[y] - brute).abs());
            }
        }
        for t in 0..len.saturating_sub(1) {
            for a in 0..l {
                for b in 0..l {
                    let brute: f64 = ys
                        .iter()
                        .zip(&probs)
                        .filter(|(ys, _)| ys[t] == a && ys[t + 1] == b)
                        .map(|(_, p)| p)
                        .sum();
                    worst_prob = worst_prob.max((post.pairwise_marginals(t)[a * l + b] - brute).abs());
                }
            }
        }

        let mut expected = vec![0.0; index.dim()];
        for (y, p) in ys.iter().zip(&probs) {
            for (i, v) in index.global_features(&inst, y).iter() {
                expected[i as usize] += p * v;
            }
        }
        let fast = model.expected_features(&inst, &post).to_dense(index.dim());
        for (a, b) in fast.iter().zip(&expected) {
            worst_prob = worst_prob.max((a - b).abs());
        }

        let (path, best) = viterbi(&lattice);
        let argmax = (0..ys.len()).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
        if path != ys[argmax] || (best - scores[argmax]).abs() > 1e-8 {
            viterbi_mismatch += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst_log <= 1e-8 && worst_prob <= 1e-10 && viterbi_mismatch == 0 && secs < 10.0,
        format!(
            "200 instances: max |dlogZ| {worst_log:.1e}, max |dmarginal/expectation| {worst_prob:.1e}, \
             viterbi mismatches {viterbi_mismatch}, {secs:.2}s"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..50 {
        let data = common::chain_corpus(2, 100 + k);
        let index = Arc::new(FeatureIndex::build(&data, TemplateSet::Small));
        let weights = (0..index.dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut model = ChainModel::from_weights(index.clone(), weights).unwrap();
        let sentence = &data.sentences()[0];
        let tags = sentence.chunks();
        let analytic = model
            .stochastic_gradient(sentence, &tags)
            .unwrap()
            .to_dense(index.dim());
        let mut numeric = vec![0.0; index.dim()];
        for i in 0..index.dim() {
            let w = model.weights()[i];
            model.weights_mut()[i] = w + h;
            let up = -model.log_likelihood(sentence, &tags).unwrap();
            model.weights_mut()[i] = w - h;
            let down = -model.log_likelihood(sentence, &tags).unwrap();
            model.weights_mut()[i] = w;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12));
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 10.0,
        format!("50 instances: max relative error {worst:.1e}, {secs:.2}s"),
    )
}

// ---------------------------------------------------------------- 3

fn sgd_reduction() -> Outcome {
    // 20 sentences x 50 epochs = 1000 steps, no regularization.
    let data = common::chain_corpus(20, 3);
    let index = Arc::new(FeatureIndex::build(&data, TemplateSet::Small));
    let (seed, lambda_hat, epochs) = (11, 2.0, 50);

    // Reference: theta <- theta - (1/lambda_hat) * g on an unscaled dense vector.
    let order = data.shuffle(seed);
    let examples = compile(&index, order.sentences());
    let mut reference = ChainModel::new(index.clone());
    let mut state = TrainState::new(ChainModel::new(index.clone()), lambda_hat);
    let identity = Transform::identity();
    let mut diverged_at = None;
    for step in 0..epochs * examples.len() {
        let ex = &examples[step % examples.len()];
        let gold = ex.gold.as_ref().unwrap();
        let (g, _) = reference.gradient_ids(&ex.instance, gold);
        let lr = 1.0 / lambda_hat;
        for (i, v) in g.iter() {
            reference.weights_mut()[i as usize] -= lr * v;
        }
        state.update_step(&ex.instance, gold, &identity, 0.0).unwrap();
        let same = state.model.scale() == 1.0
            && state
                .model
                .weights()
                .iter()
                .zip(reference.weights())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same && diverged_at.is_none() {
            diverged_at = Some(step);
        }
    }

    let trainer = Trainer::new(TrainConfig {
        c: 0.0,
        epochs,
        seed,
        lambda_hat: Some(lambda_hat),
        patience: epochs,
        ..TrainConfig::default()
    })
    .unwrap();
    let trained = trainer.train(&data, index, None).unwrap();
    let end_to_end = trained.steps == 1000
        && trained
            .model
            .weights()
            .iter()
            .zip(reference.weights())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    check(
        diverged_at.is_none() && end_to_end,
        format!(
            "1000 steps: first differing step {:?}, trainer end-to-end identical {end_to_end}",
            diverged_at
        ),
    )
}

// ---------------------------------------------------------------- 4

fn scaled_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 64;
    let mut worst = 0.0f64;
    let mut folds = 0;
    let mut worst_z = 0.0f64;
    // With lambda_hat barely above C the scale collapses by ~e^-200 over the
    // run, folding many times; the others exercise the slow-decay regime.
    for &(c, lambda_hat) in &[(0.1, 0.11), (0.5, 3.0), (0.01, 2.0)] {
        let mut weights = vec![0.0; d];
        let mut scale = 1.0;
        let mut dense = vec![0.0; d];
        let mut product = 1.0;
        let mut folded = false;
        for t in 0..1000u64 {
            let lr = learning_rate(lambda_hat, c, t);
            let nnz = rng.gen_range(0..=6);
            let step = SparseVector::from_pairs(
                (0..nnz)
                    .map(|_| (rng.gen_range(0..d as u32), rng.gen_range(-1.0..1.0)))
                    .collect(),
            );
            let before = scale;
            scaled_update(&mut weights, &mut scale, &step, lr, c).unwrap();
            if scale == 1.0 && before * (1.0 - c * lr) != 1.0 {
                folds += 1;
                folded = true;
            }
            let s = step.to_dense(d);
            for i in 0..d {
                dense[i] = (1.0 - c * lr) * dense[i] - lr * s[i];
            }
            product *= 1.0 - c * lr;
            if !folded {
                worst_z = worst_z.max((scale - product).abs());
            }
            for i in 0..d {
                let lazy = scale * weights[i];
                let denom = dense[i].abs().max(lazy.abs());
                if denom > 0.0 {
                    worst = worst.max((lazy - dense[i]).abs() / denom);
                }
            }
        }
    }
    check(
        worst <= 1e-10 && worst_z <= 1e-12 && folds > 0,
        format!("3 schedules x 1000 steps: max relative error {worst:.1e}, max |z - prod| {worst_z:.1e}, scale folds {folds}"),
    )
}

// ---------------------------------------------------------------- 5

fn transform_properties() -> Outcome {
    let transforms: Vec<Transform> = reference_updates()[1..]
        .iter()
        .map(|s| Transform::new(*s).unwrap())
        .collect();
    let mut problems = Vec::new();
    let grid: Vec<f64> = (1..=10_000).map(|k| k as f64 / 10_000.0).collect();

    for t in &transforms {
        let name = t.kind().name();
        if t.exact(0.0) != 0.0 {
            problems.push(format!("{name}: s(0) != 0"));
        }
        for &u in grid.iter().chain(&[1.5, 3.0, 10.0, 100.0]) {
            if (t.exact(-u) + t.exact(u)).abs() > 1e-9 {
                problems.push(format!("{name}: not odd at {u}"));
                break;
            }
        }
        let bound = match t.kind() {
            TransformKind::RationalG1 => 1.0 / (2.0 * 0.1f64.sqrt()),
            TransformKind::ErfG2 => 1.0,
            _ => FRAC_PI_2,
        };
        if (t.bound() - bound).abs() > 1e-9 || (-1000..=1000).any(|k| t.exact(k as f64 / 50.0).abs() > bound + 1e-9) {
            problems.push(format!("{name}: bound violated"));
        }
        let slope = match t.kind() {
            TransformKind::ArctanG1 => 1.0 / 0.1f64.sqrt(),
            _ => 10.0,
        };
        if (t.slope_at_zero() - slope).abs() > 1e-9 {
            problems.push(format!("{name}: slope_at_zero {}", t.slope_at_zero()));
        }
        let h = 1e-6;
        let numeric = (t.exact(h) - t.exact(-h)) / (2.0 * h);
        if (numeric - slope).abs() > 1e-6 {
            problems.push(format!("{name}: numerical slope {numeric}"));
        }
        // Small-gradient boost: s(u)/u strictly above s(1) and non-increasing on (0, 1].
        let ratio: Vec<f64> = grid.iter().map(|&u| t.exact(u) / u).collect();
        if ratio[..ratio.len() - 1].iter().any(|&r| r <= t.exact(1.0)) || ratio.windows(2).any(|w| w[1] > w[0] + 1e-9) {
            problems.push(format!("{name}: small-gradient boost violated"));
        }
    }

    // Figure 1: erf and gd stay on top of arctan once all three share the
    // same bound (1) and zero-slope (10).
    let norm = |kind: TransformKind, u: f64| match kind {
        TransformKind::ArctanG1 => (10.0 * FRAC_PI_2 * u).atan() / FRAC_PI_2,
        TransformKind::ErfG2 => libm::erf(5.0 * PI.sqrt() * u),
        _ => 2.0 * (0.5 * 10.0 * FRAC_PI_2 * u).tanh().atan() / FRAC_PI_2,
    };
    for &u in &grid {
        let a = norm(TransformKind::ArctanG1, u);
        if norm(TransformKind::ErfG2, u) < a - 1e-9 || norm(TransformKind::GdG3, u) < a - 1e-9 {
            problems.push(format!("dominance violated at {u}"));
            break;
        }
    }

    check(
        problems.is_empty(),
        if problems.is_empty() {
            "oddness, bounds, zero-slopes (10, 1/sqrt(0.1), 10, 10), boost monotonicity, erf/gd above arctan".into()
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 6

fn table_error() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let table = TableSpec {
        resolution: 4096,
        range: 1.0,
    };
    let delta = table.range / table.resolution as f64;
    let mut details = Vec::new();
    let mut ok = true;
    for spec in reference_updates() {
        let exact = Transform::new(spec).unwrap();
        let fast = Transform::new(spec.with_table(table)).unwrap();
        let limit = exact.slope_at_zero() * delta / 2.0 + 1e-12;
        let mut probes: Vec<f64> = (0..100_000).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        // Midpoints between grid nodes are the worst case for rounding.
        probes.extend((-4096..4096).map(|j| (j as f64 + 0.5) * delta));
        let worst = probes
            .iter()
            .map(|&u| (fast.eval(u) - exact.exact(u)).abs())
            .fold(0.0, f64::max);
        ok &= worst <= limit;
        details.push(format!("{} {:.2}", spec.kind.name(), worst / limit));
    }
    check(
        ok,
        format!("max error / bound at resolution 4096: {}", details.join(", ")),
    )
}

// ---------------------------------------------------------------- 7 and 9

/// Trains on the fixed synthetic corpus with no regularization and no early
/// stopping, returning `|| mean(E - Phi) ||_inf`.
fn moment_residual(data: &Dataset, update: TransformSpec) -> (f64, f64) {
    let index = Arc::new(FeatureIndex::build(data, TemplateSet::Small));
    let trainer = Trainer::new(TrainConfig {
        update,
        c: 0.0,
        epochs: 200,
        patience: 200,
        ..TrainConfig::default()
    })
    .unwrap();
    let trained = trainer.train(data, index.clone(), None).unwrap();
    let examples = compile(&index, data.sentences());
    (mean_gradient(&trained.model, &examples).max_abs(), trained.lambda_hat)
}

fn synthetic_corpus() -> Dataset {
    common::chain_corpus(20, 0)
}

fn moment_matching() -> Outcome {
    let started = Instant::now();
    let data = synthetic_corpus();
    let mut ok = true;
    let mut details = Vec::new();
    for spec in reference_updates() {
        let (residual, lambda_hat) = moment_residual(&data, spec);
        ok &= residual < 1e-2;
        details.push(format!("{} {residual:.1e} (lambda_hat {lambda_hat})", spec.kind.name()));
    }
    let secs = started.elapsed().as_secs_f64();
    check(ok && secs < 60.0, format!("{}, {secs:.1}s", details.join(", ")))
}

fn hyperparameter_insensitivity() -> Outcome {
    let data = synthetic_corpus();
    let (r1, l1) = moment_residual(&data, TransformSpec::new(TransformKind::ArctanG1, 0.1));
    let (r2, l2) = moment_residual(&data, TransformSpec::new(TransformKind::ArctanG1, 0.01));
    let ratio = (r1 / r2).max(r2 / r1);
    check(
        ratio < 2.0,
        format!(
            "arctan eps=0.1 residual {r1:.2e} (lambda_hat {l1}), eps=0.01 residual {r2:.2e} (lambda_hat {l2}), ratio {ratio:.2}"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn find_split(dir: &Path, stem: &str) -> Option<PathBuf> {
    [format!("{stem}.txt"), format!("{stem}.txt.gz")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
}

fn conll_reproduction() -> Outcome {
    let Some(dir) = std::env::var_os("BCRF_CONLL2000_DIR").map(PathBuf::from) else {
        return Outcome::Skip("BCRF_CONLL2000_DIR not set; CoNLL-2000 data unavailable".into());
    };
    let (Some(train_path), Some(test_path)) = (find_split(&dir, "train"), find_split(&dir, "test")) else {
        return Outcome::Skip(format!("no train.txt/test.txt under {}", dir.display()));
    };
    let train = read_conll(&train_path, false).unwrap();
    let test = read_conll(&test_path, false).unwrap();
    let index = Arc::new(FeatureIndex::build(&train, TemplateSet::Small));
    let mean_f1 = |update: TransformSpec| {
        let f1s: Vec<f64> = (0..5)
            .map(|seed| {
                let trainer = Trainer::new(TrainConfig {
                    update,
                    seed,
                    ..TrainConfig::default()
                })
                .unwrap();
                let trained = trainer.train(&train, index.clone(), Some(&test)).unwrap();
                100.0 * trained.metrics.last().unwrap().test.unwrap().chunks.f1
            })
            .collect();
        (f1s.iter().sum::<f64>() / f1s.len() as f64, f1s)
    };
    let (sgd, sgd_runs) = mean_f1(TransformSpec::identity());
    let (arctan, _) = mean_f1(TransformSpec::new(TransformKind::ArctanG1, 0.1));
    let sgd_in_band = sgd_runs.iter().all(|f| (f - 95.98).abs() <= 0.3);
    check(
        sgd_in_band && arctan >= sgd - 0.05,
        format!(
            "{} train / {} test sentences, d = {}; SGD F1 {sgd_runs:.2?} (mean {sgd:.2}), arctan.1 mean {arctan:.2}",
            train.len(),
            test.len(),
            index.dim()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("inference oracle", inference_oracle),
        ("gradient check", gradient_check),
        ("SGD reduction", sgd_reduction),
        ("scaled-update equivalence", scaled_equivalence),
        ("transform properties", transform_properties),
        ("lookup-table error bound", table_error),
        ("moment matching", moment_matching),
        ("CoNLL-2000 reproduction", conll_reproduction),
        ("hyperparameter insensitivity", hyperparameter_insensitivity),
    ];
    let mut failed = Vec::new();
    println!();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed.push(k + 1);
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {} {name}: {detail}", k + 1);
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
