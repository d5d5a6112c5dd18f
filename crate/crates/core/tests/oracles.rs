//! Independent reference implementations and hand-computed goldens for the
//! preprocessing, ensemble, loss, metric and transfer-decision arithmetic.

use std::sync::{Mutex, OnceLock};

use idsnet::ensemble::{
    combine, gates_from_logits, interpret_weights, weighted_sum, ChannelNet, GateMode, Terminal,
};
use idsnet::preprocess::{
    discretize_equal_frequency, hampel_correct, mmd_squared, relieff_rank, select_source,
    HampelConfig, MmdConfig, ReliefFConfig,
};
use idsnet::synth::{synth_generate, SynthProfile};
use idsnet::train::{evaluate_metrics, penalized_mse, sensitivity_std, BandStats, LossConfig};
use idsnet::transfer::decide;
use ndgrad::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rand_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn mmd_brute(a: &[Vec<f64>], b: &[Vec<f64>], sigmas: &[f64]) -> f64 {
    let k = |x: &[f64], y: &[f64], s: f64| {
        let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
        (-d2 / (2.0 * s * s)).exp()
    };
    let mean = |x: &[Vec<f64>], y: &[Vec<f64>], s: f64| {
        let mut t = 0.0;
        for p in x {
            for q in y {
                t += k(p, q, s);
            }
        }
        t / (x.len() * y.len()) as f64
    };
    sigmas
        .iter()
        .map(|&s| mean(a, a, s) + mean(b, b, s) - 2.0 * mean(a, b, s))
        .sum()
}

#[test]
pub fn mmd_matches_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for pair in 0..20 {
        let (n, m) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let dim = rng.random_range(1..=6);
        let a = rand_set(&mut rng, n, dim);
        let b = rand_set(&mut rng, m, dim);
        let sigmas: Vec<f64> = (0..rng.random_range(1..=5))
            .map(|_| rng.random_range(0.2..3.0))
            .collect();
        let got = mmd_squared(&a, &b, &sigmas).unwrap();
        let want = mmd_brute(&a, &b, &sigmas);
        assert!(close(got, want, 1e-10), "pair {pair}: {got} vs {want}");
        assert_eq!(
            got,
            mmd_squared(&b, &a, &sigmas).unwrap(),
            "pair {pair} not symmetric"
        );
        assert!(mmd_squared(&a, &a, &sigmas).unwrap().abs() <= 1e-12);
    }
    let zero = vec![vec![0.0], vec![0.0]];
    let one = vec![vec![1.0], vec![1.0]];
    let v = mmd_squared(&zero, &one, &[1.0]).unwrap();
    assert!(close(v, 2.0 - 2.0 * (-0.5f64).exp(), 1e-9));
}

#[test]
fn source_selection_prefers_the_similar_station() {
    let target = synth_generate(1, 6, &SynthProfile::new("target", 10.0, 0.3, 10.0)).unwrap();
    let mut shifted = target.clone();
    shifted.station_id = "shifted".into();
    shifted.power.iter_mut().for_each(|p| *p += 0.3);
    let noisy = synth_generate(2, 6, &SynthProfile::new("noisy", 10.0, 1.0, 4.0)).unwrap();
    let cfg = MmdConfig::default();
    let sel = select_source(&[noisy.clone(), shifted], &target, &cfg).unwrap();
    assert_eq!(sel.selected, "shifted");
    let sel = select_source(&[noisy.clone(), target.clone()], &target, &cfg).unwrap();
    assert_eq!(sel.selected_index, 1);
    assert!(sel.table[1].1.abs() < 1e-12);
    assert_eq!(
        select_source(&[noisy], &target, &cfg)
            .unwrap()
            .selected_index,
        0
    );
}

#[test]
pub fn hampel_goldens() {
    let cfg = HampelConfig::default();
    let r = hampel_correct(&[1.0, 2.0, 100.0, 2.0, 1.0], &cfg).unwrap();
    assert_eq!(r.corrected, [1.0, 2.0, 2.0, 2.0, 1.0]);
    assert_eq!(r.outliers, [2]);

    let flat = vec![4.5; 40];
    let r = hampel_correct(&flat, &cfg).unwrap();
    assert_eq!(r.corrected, flat);
    assert!(r.outliers.is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut x: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        for _ in 0..5 {
            let i = rng.random_range(0..x.len());
            x[i] += 50.0;
        }
        let r = hampel_correct(&x, &cfg).unwrap();
        assert!(!r.outliers.is_empty());
        for i in 0..x.len() {
            if r.outliers.binary_search(&i).is_err() {
                assert_eq!(
                    r.corrected[i].to_bits(),
                    x[i].to_bits(),
                    "point {i} changed"
                );
            }
        }
    }
}

/// Multi-class ReliefF written directly from the weight-update formula:
/// every reference instance, k nearest hits and k nearest misses per other
/// class by Euclidean distance over range-scaled features, ties to the lower
/// index.
fn relieff_brute(x: &[Vec<f64>], class: &[usize], k: usize) -> Vec<f64> {
    let (n, na) = (x.len(), x[0].len());
    let lo: Vec<f64> = (0..na)
        .map(|a| x.iter().map(|r| r[a]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..na)
        .map(|a| x.iter().map(|r| r[a]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let diff = |a: usize, i: usize, j: usize| {
        if hi[a] > lo[a] {
            (x[i][a] - x[j][a]).abs() / (hi[a] - lo[a])
        } else {
            0.0
        }
    };
    let dist = |i: usize, j: usize| (0..na).map(|a| diff(a, i, j).powi(2)).sum::<f64>().sqrt();
    let n_class = class.iter().max().unwrap() + 1;
    let p: Vec<f64> = (0..n_class)
        .map(|c| class.iter().filter(|&&d| d == c).count() as f64 / n as f64)
        .collect();
    let nearest = |r: usize, c: usize| {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != r && class[j] == c)
            .map(|j| (dist(r, j), j))
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        cand.into_iter().take(k).map(|(_, j)| j).collect::<Vec<_>>()
    };
    let m = n as f64;
    let mut w = vec![0.0; na];
    for (a, wa) in w.iter_mut().enumerate() {
        for r in 0..n {
            let hits: f64 = nearest(r, class[r]).iter().map(|&h| diff(a, r, h)).sum();
            let mut misses = 0.0;
            for c in (0..n_class).filter(|&c| c != class[r]) {
                let s: f64 = nearest(r, c).iter().map(|&j| diff(a, r, j)).sum();
                misses += p[c] / (1.0 - p[class[r]]) * s;
            }
            *wa += (misses - hits) / (m * k as f64);
        }
    }
    w
}

#[test]
pub fn relieff_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ReliefFConfig {
        k_neighbors: 3,
        ..ReliefFConfig::default()
    };
    for trial in 0..10 {
        let x = rand_set(&mut rng, 30, 3);
        let class: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let got = relieff_rank(&x, &class, &cfg).unwrap();
        let want = relieff_brute(&x, &class, 3);
        for a in 0..3 {
            assert!(
                close(got.weights[a], want[a], 1e-10),
                "trial {trial} feature {a}: {got:?} vs {want:?}"
            );
            assert!((-1.0..=1.0).contains(&got.weights[a]));
        }
    }

    let mut x = rand_set(&mut rng, 30, 3);
    x.iter_mut().for_each(|r| r[1] = 7.0);
    let class: Vec<usize> = (0..30).map(|i| i % 3).collect();
    assert_eq!(relieff_rank(&x, &class, &cfg).unwrap().weights[1], 0.0);
}

#[test]
pub fn relieff_finds_the_informative_feature() {
    let cfg = ReliefFConfig {
        k_neighbors: 5,
        ..ReliefFConfig::default()
    };
    let mut first = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let target: Vec<f64> = rows
            .iter()
            .map(|r| r[0] + 0.05 * rng.random_range(-1.0..1.0))
            .collect();
        let class = discretize_equal_frequency(&target, 4);
        if relieff_rank(&rows, &class, &cfg).unwrap().order[0] == 0 {
            first += 1;
        }
    }
    assert!(
        first >= 95,
        "informative feature ranked first {first}/100 times"
    );
}

struct Capture(Mutex<Vec<String>>);

impl log::Log for Capture {
    fn enabled(&self, m: &log::Metadata<'_>) -> bool {
        m.level() <= log::Level::Warn
    }
    fn log(&self, r: &log::Record<'_>) {
        if self.enabled(r.metadata()) {
            self.0.lock().unwrap().push(r.args().to_string());
        }
    }
    fn flush(&self) {}
}

fn warnings() -> &'static Capture {
    static CAPTURE: OnceLock<&'static Capture> = OnceLock::new();
    CAPTURE.get_or_init(|| {
        let c: &'static Capture = Box::leak(Box::new(Capture(Mutex::new(Vec::new()))));
        if log::set_logger(c).is_ok() {
            log::set_max_level(log::LevelFilter::Warn);
        }
        c
    })
}

fn channel(prefix: &str) -> ChannelNet {
    ChannelNet {
        prefix: prefix.into(),
        z_dim: 8,
        hidden: 16,
        outputs: 8,
        dropout: 0.1,
        terminal: Terminal::Softmax,
    }
}

fn maps(g: &mut Graph<'_>, rng: &mut ChaCha8Rng, k: usize) -> Vec<Var> {
    (0..k)
        .map(|_| {
            let data = (0..24).map(|_| rng.random_range(-2.0..2.0)).collect();
            g.input(Tensor::new(vec![2, 3, 4], data).unwrap())
        })
        .collect()
}

#[test]
pub fn ensemble_algebra() {
    let capture = warnings();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (c1, c2) = (channel("c1"), channel("c2"));
        c1.init(&mut store, &mut rng);
        c2.init(&mut store, &mut rng);
        for training in [false, true] {
            let mut g = Graph::with_params(&store).training(training).seed(seed);
            let w = interpret_weights(&mut g, &c1).unwrap();
            let sum: f64 = g.value(w).data().iter().sum();
            assert!(close(sum, 1.0, 1e-9), "seed {seed}: sum w = {sum}");
        }
        let mut g = Graph::with_params(&store);
        let logits = c2.logits(&mut g).unwrap();
        let gates = gates_from_logits(&mut g, logits, 10.0, GateMode::Infer);
        assert!(g.value(gates).data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut g = Graph::new();
    let f = maps(&mut g, &mut rng, 8);
    let w = g.input(Tensor::vector((1..=8).map(|i| i as f64 / 36.0).collect()));
    for pick in 0..8 {
        let mut one_hot = vec![0.0; 8];
        one_hot[pick] = 1.0;
        let gates = g.input(Tensor::vector(one_hot));
        let (out, c) = combine(&mut g, &f, w, gates, true).unwrap();
        assert!(!c.fallback);
        assert_eq!(g.value(out), g.value(f[pick]), "one-hot gate {pick}");
    }

    capture.0.lock().unwrap().clear();
    let closed = g.input(Tensor::vector(vec![0.0; 8]));
    let (out, c) = combine(&mut g, &f, w, closed, true).unwrap();
    assert!(c.fallback);
    let wv = g.value(w).data().to_vec();
    let want: Vec<f64> = (0..24)
        .map(|i| (0..8).map(|k| wv[k] * g.value(f[k]).data()[i]).sum())
        .collect();
    for (a, b) in g.value(out).data().iter().zip(&want) {
        assert!(close(*a, *b, 1e-12));
    }
    assert!(
        capture
            .0
            .lock()
            .unwrap()
            .iter()
            .any(|m| m.contains("gates are closed")),
        "no fallback warning was logged"
    );
    let direct = weighted_sum(&mut g, &f, w).unwrap();
    assert_eq!(g.value(direct), g.value(out));
}

#[test]
pub fn loss_goldens() {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let target: Vec<f64> = (0..50).map(|_| rng.random_range(4.0..6.0)).collect();
    let pred: Vec<f64> = target
        .iter()
        .map(|y| y + rng.random_range(-1.0..1.0))
        .collect();
    let stats = BandStats {
        mean: 5.0,
        std: 1.0,
    };
    let plain = pred
        .iter()
        .zip(&target)
        .map(|(p, y)| (y - p).powi(2))
        .sum::<f64>()
        / 50.0;
    assert_eq!(penalized_mse(&pred, &target, &cfg, &stats).unwrap(), plain);

    let mut y = vec![0.0; 9];
    y.push(10.0);
    let mut yhat = y.clone();
    yhat[9] = 9.0;
    let stats = BandStats::fit(&y).unwrap();
    assert_eq!((stats.mean, stats.std), (1.0, 3.0));
    assert!(close(
        penalized_mse(&yhat, &y, &cfg, &stats).unwrap(),
        0.3,
        1e-12
    ));

    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let stats = BandStats::fit(&t).unwrap();
        let penal = penalized_mse(&p, &t, &cfg, &stats).unwrap();
        let plain = penalized_mse(&p, &t, &LossConfig::plain(), &stats).unwrap();
        assert!(penal >= plain);
    }
}

#[test]
pub fn metric_goldens() {
    let m = evaluate_metrics(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!(close(m.mse, 1.0 / 3.0, 1e-9));
    assert!(close(m.mae, 1.0 / 3.0, 1e-9));
    assert!(close(m.rmse, 0.57735, 1e-5));
    assert!(close(m.rmse, (1.0f64 / 3.0).sqrt(), 1e-9));
    assert!(close(m.r2, 0.5, 1e-9));
    assert!(close(
        sensitivity_std(&[1.0, 2.0, 3.0]).unwrap(),
        0.8165,
        1e-4
    ));
}

#[test]
pub fn transfer_decision_boundary() {
    assert!(!decide(0.2, 0.2).fine_tune);
    assert!(decide(0.2 + 1e-9, 0.2).fine_tune);
}
