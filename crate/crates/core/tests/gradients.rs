use augkit::corpus::{Dataset, Role};
use augkit::rng::KeyedRng;
use augkit::synth::{SynthConfig, SynthWorld};
use augkit::trainer::{
    contrastive_with_grad, cross_entropy, cross_entropy_with_grad, train_epochs,
    train_on_augmented, ClassifierHead, Phase, TrainConfig,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn normal(rng: &mut KeyedRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Relative error of two gradient blocks, ||a - b|| / max(||a||, ||b||).
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` around `x`.
fn numeric(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + H;
            let up = f(&p);
            p[i] = orig - H;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

struct Batch {
    head: ClassifierHead,
    xs: Vec<Vec<f64>>,
    ys: Vec<usize>,
}

/// A random head with a perturbed adapter and a batch holding at least one
/// positive and one negative pair.
fn batch(i: u64) -> Batch {
    let mut rng = KeyedRng::new(i, "test/gradients", "batch");
    let d = rng.random_range(2..6);
    let c = rng.random_range(2..5);
    let n = rng.random_range(3..8);
    let classes = (0..c).map(|k| format!("c{k}")).collect();
    let mut adapter = normal(&mut rng, d * d);
    for r in 0..d {
        adapter[r * d + r] += 1.0;
    }
    let head = ClassifierHead::from_parts(classes, d, normal(&mut rng, d * c), normal(&mut rng, c))
        .unwrap()
        .with_adapter(Some(adapter))
        .unwrap();
    let xs = (0..n).map(|_| normal(&mut rng, d)).collect();
    let mut ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    ys[0] = 0;
    ys[1] = 0;
    ys[2] = 1;
    Batch { head, xs, ys }
}

fn flat(xs: &[Vec<f64>]) -> Vec<f64> {
    xs.iter().flatten().copied().collect()
}

fn unflat(v: &[f64], d: usize) -> Vec<Vec<f64>> {
    v.chunks(d).map(<[f64]>::to_vec).collect()
}

#[test]
fn cross_entropy_logit_gradient() {
    for i in 0..50 {
        let mut rng = KeyedRng::new(i, "test/gradients", "ce");
        let c = rng.random_range(2..6);
        let n = rng.random_range(1..6);
        let logits: Vec<Vec<f64>> = (0..n)
            .map(|_| normal(&mut rng, c).iter().map(|x| 3.0 * x).collect())
            .collect();
        let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let (_, g) = cross_entropy_with_grad(&logits, &ys).unwrap();
        let num = numeric(&flat(&logits), |v| {
            cross_entropy(&unflat(v, c), &ys).unwrap()
        });
        let e = rel_err(&flat(&g), &num);
        assert!(e < TOL, "batch {i}: {e}");
    }
}

#[test]
fn contrastive_input_gradient() {
    for i in 0..50 {
        let b = batch(i);
        let d = b.xs[0].len();
        let cl = contrastive_with_grad(&b.xs, &b.ys).unwrap();
        assert!(!cl.no_positive);
        let num = numeric(&flat(&b.xs), |v| {
            contrastive_with_grad(&unflat(v, d), &b.ys).unwrap().value
        });
        let e = rel_err(&flat(&cl.grad), &num);
        assert!(e < TOL, "batch {i}: {e}");
    }
}

#[test]
fn combined_loss_parameter_gradients() {
    for i in 0..50 {
        let b = batch(i);
        let d = b.head.dim();
        for lambda in [0.0, 1.0, 2.0] {
            let g = b.head.loss_and_grad(&b.xs, &b.ys, lambda).unwrap();
            assert!((g.total - (g.ce + lambda * g.cl)).abs() < 1e-12);
            let loss = |h: &ClassifierHead, xs: &[Vec<f64>]| {
                h.loss_and_grad(xs, &b.ys, lambda).unwrap().total
            };

            let num_w = numeric(b.head.weights(), |w| {
                let mut h = b.head.clone();
                h.weights_mut().copy_from_slice(w);
                loss(&h, &b.xs)
            });
            let num_b = numeric(b.head.bias(), |v| {
                let mut h = b.head.clone();
                h.bias_mut().copy_from_slice(v);
                loss(&h, &b.xs)
            });
            let num_a = numeric(b.head.adapter().unwrap(), |a| {
                let mut h = b.head.clone();
                h.adapter_mut().unwrap().copy_from_slice(a);
                loss(&h, &b.xs)
            });
            let num_e = numeric(&flat(&b.xs), |v| loss(&b.head, &unflat(v, d)));

            for (name, analytic, num) in [
                ("W", g.weights.clone(), num_w),
                ("b", g.bias.clone(), num_b),
                ("A", g.adapter.clone().unwrap(), num_a),
                ("e", flat(&g.embeddings), num_e),
            ] {
                let e = rel_err(&analytic, &num);
                assert!(e < TOL, "batch {i}, lambda {lambda}, {name}: {e}");
            }
        }
    }
}

#[test]
fn ce_and_cl_parts_separately() {
    // lambda = 0 isolates L_CE; the difference of lambda = 1 and 0 isolates L_CL.
    for i in 0..50 {
        let b = batch(i);
        let d = b.head.dim();
        let g0 = b.head.loss_and_grad(&b.xs, &b.ys, 0.0).unwrap();
        let g1 = b.head.loss_and_grad(&b.xs, &b.ys, 1.0).unwrap();
        let cl_grad: Vec<f64> = flat(&g1.embeddings)
            .iter()
            .zip(flat(&g0.embeddings))
            .map(|(a, b)| a - b)
            .collect();
        let num = numeric(&flat(&b.xs), |v| {
            b.head.loss_and_grad(&unflat(v, d), &b.ys, 1.0).unwrap().cl
        });
        let e = rel_err(&cl_grad, &num);
        assert!(e < TOL, "batch {i}: {e}");
        let num_ce = numeric(&flat(&b.xs), |v| {
            b.head.loss_and_grad(&unflat(v, d), &b.ys, 0.0).unwrap().ce
        });
        let e = rel_err(&flat(&g0.embeddings), &num_ce);
        assert!(e < TOL, "batch {i}: {e}");
    }
}

#[test]
fn uniform_logits_give_ln_c() {
    for c in 2..12 {
        for v in [0.0, -3.5, 17.0] {
            let logits = vec![vec![v; c]; 4];
            let l = cross_entropy(&logits, &[0, 1, c - 1, 0]).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-9, "C={c}: {l}");
        }
    }
}

fn small_world() -> SynthWorld {
    SynthWorld::generate(&SynthConfig {
        base_per_class: 8,
        novel_per_class: 6,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs_base: 20,
        epochs_fewshot: 20,
        learning_rate: 0.05,
        ..TrainConfig::default()
    }
}

fn split(novel: &Dataset) -> (Dataset, Dataset) {
    let (train, test): (Vec<_>, Vec<_>) = novel
        .iter()
        .cloned()
        .partition(|s| s.id.ends_with("000") || s.id.ends_with("001"));
    (
        Dataset::new(train, Role::Novel).unwrap(),
        Dataset::new(test, Role::Novel).unwrap(),
    )
}

#[test]
fn training_is_deterministic() {
    let w = small_world();
    let store = w.word_store();
    let (train, test) = split(&w.novel);
    let a = train_on_augmented(&w.base, &train, &test, &store, &small_config(), "raw").unwrap();
    let b = train_on_augmented(&w.base, &train, &test, &store, &small_config(), "raw").unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn zero_fewshot_epochs_leave_head_untouched() {
    let w = small_world();
    let store = w.word_store();
    let (train, test) = split(&w.novel);
    let run = train_on_augmented(&w.base, &train, &test, &store, &small_config(), "raw").unwrap();
    let mut head = run.head.clone();
    let data: Vec<(Vec<f64>, usize)> = train
        .iter()
        .map(|s| {
            (
                store.sentence_embed(None, &s.text).unwrap(),
                head.class_index(&s.label).unwrap(),
            )
        })
        .collect();
    let (records, _) =
        train_epochs(&mut head, &data, Phase::Fewshot, 0, 1.0, &small_config()).unwrap();
    assert!(records.is_empty());
    assert_eq!(head, run.head);

    let cfg = TrainConfig {
        epochs_fewshot: 0,
        ..small_config()
    };
    let r = train_on_augmented(&w.base, &train, &test, &store, &cfg, "raw").unwrap();
    assert!(r.trajectory.iter().all(|e| e.phase == Phase::Base));
}

#[test]
fn base_phase_loss_decreases() {
    let w = small_world();
    let store = w.word_store();
    let (train, test) = split(&w.novel);
    let run = train_on_augmented(&w.base, &train, &test, &store, &small_config(), "raw").unwrap();
    let base: Vec<f64> = run
        .trajectory
        .iter()
        .filter(|e| e.phase == Phase::Base)
        .map(|e| e.ce)
        .collect();
    assert!(base.last().unwrap() < base.first().unwrap(), "{base:?}");
    assert!(run
        .trajectory
        .iter()
        .filter(|e| e.phase == Phase::Base)
        .all(|e| e.cl == 0.0));
}
