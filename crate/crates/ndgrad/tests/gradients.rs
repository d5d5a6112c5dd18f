//! Finite-difference checks for every op, over ten seeds and small random
//! shapes (no axis larger than 8, rank at most 3).

use ndgrad::gradcheck::{check_inputs, check_inputs_with, GradReport};
use ndgrad::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-3;
const SEEDS: u64 = 10;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=4)
}

/// `sum(y * r)` for a fixed pseudo-random `r`, so every output coordinate
/// carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<'_>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let r: Vec<f64> = (0..n)
        .map(|i| ((i * 7919 % 113) as f64 / 113.0) - 0.4)
        .collect();
    let r = g.input(Tensor::new(shape, r).unwrap());
    let p = g.mul(y, r)?;
    Ok(g.reduce_sum(p))
}

fn assert_ok(kind: &str, seed: u64, report: GradReport) {
    assert!(
        report.max_error() < TOL,
        "{kind} seed {seed}: {:?}",
        report.worst()
    );
}

fn for_seeds(kind: &str, mut case: impl FnMut(&mut ChaCha8Rng) -> GradReport) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + kind.len() as u64);
        assert_ok(kind, seed, case(&mut rng));
    }
}

#[test]
pub fn binary_elementwise() {
    for_seeds("add", |rng| {
        let s = [dim(rng), dim(rng), dim(rng)];
        let a = rand_tensor(rng, &s, -1.0, 1.0);
        let b = rand_tensor(rng, &s, -1.0, 1.0);
        check_inputs(&[a, b], H, |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("sub", |rng| {
        let s = [dim(rng), dim(rng)];
        let a = rand_tensor(rng, &s, -1.0, 1.0);
        let b = rand_tensor(rng, &s, -1.0, 1.0);
        check_inputs(&[a, b], H, |g, v| {
            let y = g.sub(v[0], v[1])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("mul", |rng| {
        let s = [dim(rng), dim(rng), dim(rng)];
        let a = rand_tensor(rng, &s, -1.0, 1.0);
        let b = rand_tensor(rng, &s, -1.0, 1.0);
        check_inputs(&[a, b], H, |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("scale", |rng| {
        let s = [dim(rng), dim(rng)];
        let a = rand_tensor(rng, &s, -1.0, 1.0);
        let c = rand_tensor(rng, &[1], -1.0, 1.0);
        check_inputs(&[a, c], H, |g, v| {
            let y = g.scale(v[0], v[1])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("div_scalar", |rng| {
        let s = [dim(rng), dim(rng)];
        let a = rand_tensor(rng, &s, -1.0, 1.0);
        let c = rand_tensor(rng, &[1], 0.5, 2.0);
        check_inputs(&[a, c], H, |g, v| {
            let y = g.div_scalar(v[0], v[1])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
}

#[test]
pub fn unary_elementwise() {
    for_seeds("scale_const", |rng| {
        let shape = [dim(rng), dim(rng)];
        let a = rand_tensor(rng, &shape, -1.0, 1.0);
        check_inputs(&[a], H, |g, v| {
            let y = g.scale_const(v[0], -2.5);
            let y = g.add_const(y, 0.7);
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("recip", |rng| {
        let shape = [dim(rng), dim(rng)];
        let a = rand_tensor(rng, &shape, 0.5, 1.5);
        check_inputs(&[a], H, |g, v| {
            let y = g.recip(v[0])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("relu", |rng| {
        let shape = [dim(rng), dim(rng), dim(rng)];
        let a = rand_tensor(rng, &shape, -1.0, 1.0);
        check_inputs(&[a], H, |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("tanh", |rng| {
        let shape = [dim(rng), dim(rng)];
        let a = rand_tensor(rng, &shape, -2.0, 2.0);
        check_inputs(&[a], H, |g, v| {
            let y = g.tanh(v[0]);
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("sigmoid", |rng| {
        let shape = [dim(rng), dim(rng)];
        let a = rand_tensor(rng, &shape, -3.0, 3.0);
        check_inputs(&[a], H, |g, v| {
            let y = g.sigmoid(v[0]);
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("sigmoid_steep", |rng| {
        let shape = [dim(rng), dim(rng)];
        let a = rand_tensor(rng, &shape, -0.5, 0.5);
        check_inputs(&[a], H, |g, v| {
            let y = g.sigmoid_steep(v[0], 5.0);
            weighted_sum(g, y)
        })
        .unwrap()
    });
}

#[test]
pub fn linear_algebra() {
    for_seeds("matmul", |rng| {
        let (m, k, n) = (dim(rng), dim(rng) + 1, dim(rng));
        let a = rand_tensor(rng, &[m, k], -1.0, 1.0);
        let b = rand_tensor(rng, &[k, n], -1.0, 1.0);
        check_inputs(&[a, b], H, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("bmm", |rng| {
        let (bs, m, k, n) = (dim(rng), dim(rng), dim(rng), dim(rng));
        let a = rand_tensor(rng, &[bs, m, k], -1.0, 1.0);
        let b = rand_tensor(rng, &[bs, k, n], -1.0, 1.0);
        check_inputs(&[a, b], H, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("transpose", |rng| {
        let shape = [dim(rng), dim(rng), dim(rng)];
        let a = rand_tensor(rng, &shape, -1.0, 1.0);
        check_inputs(&[a], H, |g, v| {
            let y = g.transpose(v[0])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("affine", |rng| {
        let (bs, t, fi, fo) = (dim(rng), dim(rng), dim(rng), rng.random_range(1..=8));
        let x = rand_tensor(rng, &[bs, t, fi], -1.0, 1.0);
        let w = rand_tensor(rng, &[fi, fo], -1.0, 1.0);
        let b = rand_tensor(rng, &[fo], -1.0, 1.0);
        check_inputs(&[x, w, b], H, |g, v| {
            let y = g.affine(v[0], v[1], v[2])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("conv1d", |rng| {
        let (bs, len, ci, co) = (dim(rng), rng.random_range(3..=8), dim(rng), dim(rng));
        let padding = rng.random_range(0..=1);
        let x = rand_tensor(rng, &[bs, len, ci], -1.0, 1.0);
        let w = rand_tensor(rng, &[co, ci, 3], -1.0, 1.0);
        let b = rand_tensor(rng, &[co], -1.0, 1.0);
        check_inputs(&[x, w, b], H, |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], padding)?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("max_pool1d", |rng| {
        let shape = [dim(rng), rng.random_range(2..=8), dim(rng)];
        let x = rand_tensor(rng, &shape, -1.0, 1.0);
        check_inputs(&[x], H, |g, v| {
            let y = g.max_pool1d(v[0], 2, 2)?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
}

#[test]
pub fn normalisation_and_regularisation() {
    for_seeds("softmax", |rng| {
        let axis = rng.random_range(0..3);
        let shape = [dim(rng), dim(rng) + 1, dim(rng)];
        let x = rand_tensor(rng, &shape, -2.0, 2.0);
        check_inputs(&[x], H, |g, v| {
            let y = g.softmax(v[0], axis)?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("dropout", |rng| {
        let seed = rng.random::<u64>();
        let shape = [dim(rng), 8];
        let x = rand_tensor(rng, &shape, -1.0, 1.0);
        check_inputs_with(
            || Graph::new().training(true).seed(seed),
            &[x],
            H,
            |g, v| {
                let y = g.dropout(v[0], 0.3)?;
                weighted_sum(g, y)
            },
        )
        .unwrap()
    });
}

#[test]
pub fn structural() {
    for_seeds("concat", |rng| {
        let axis = rng.random_range(0..3);
        let mut s1 = [dim(rng), dim(rng), dim(rng)];
        let a = rand_tensor(rng, &s1, -1.0, 1.0);
        s1[axis] = dim(rng);
        let b = rand_tensor(rng, &s1, -1.0, 1.0);
        check_inputs(&[a, b], H, |g, v| {
            let y = g.concat(&[v[0], v[1], v[0]], axis)?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("slice", |rng| {
        let shape = [dim(rng), 8, dim(rng)];
        let x = rand_tensor(rng, &shape, -1.0, 1.0);
        let start = rng.random_range(0..4);
        check_inputs(&[x], H, |g, v| {
            let y = g.slice(v[0], 1, start, 3)?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("reshape", |rng| {
        let (a, b, c) = (dim(rng), dim(rng), dim(rng));
        let x = rand_tensor(rng, &[a, b, c], -1.0, 1.0);
        check_inputs(&[x], H, |g, v| {
            let y = g.flatten(v[0])?;
            let y = g.reshape(y, &[a * b * c])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("stack_select", |rng| {
        let s = [dim(rng), dim(rng)];
        let a = rand_tensor(rng, &s, -1.0, 1.0);
        let b = rand_tensor(rng, &s, -1.0, 1.0);
        check_inputs(&[a, b], H, |g, v| {
            let st = g.stack(&[v[0], v[1]], 1)?;
            let y = g.select(st, 1, 1)?;
            let z = g.mul(y, v[0])?;
            weighted_sum(g, z)
        })
        .unwrap()
    });
    for_seeds("reduce", |rng| {
        let shape = [dim(rng), dim(rng), dim(rng)];
        let x = rand_tensor(rng, &shape, -1.0, 1.0);
        check_inputs(&[x], H, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            let a = g.reduce_mean(sq);
            let b = g.reduce_sum(v[0]);
            let ab = g.mul(a, b)?;
            Ok(ab)
        })
        .unwrap()
    });
}

#[test]
pub fn mean_relu_of_affine_map_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let w = rand_tensor(&mut rng, &[5, 4], -0.5, 0.5);
    let x = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let report = check_inputs(&[w, x], H, |g, v| {
        let y = g.matmul(v[1], v[0])?;
        let y = g.relu(y);
        Ok(g.reduce_mean(y))
    })
    .unwrap();
    assert_ok("mean_relu", 42, report);
}

#[test]
pub fn fused_blocks() {
    for_seeds("attention", |rng| {
        let heads = rng.random_range(1..=3);
        let shape = [
            dim(rng),
            rng.random_range(1..=6),
            heads * rng.random_range(1..=2),
        ];
        let q = rand_tensor(rng, &shape, -1.0, 1.0);
        let k = rand_tensor(rng, &shape, -1.0, 1.0);
        let v = rand_tensor(rng, &shape, -1.0, 1.0);
        check_inputs(&[q, k, v], H, |g, x| {
            let y = g.attention(x[0], x[1], x[2], heads)?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("lstm_cell", |rng| {
        let (b, h) = (dim(rng), dim(rng));
        let z = rand_tensor(rng, &[b, 4 * h], -2.0, 2.0);
        let c = rand_tensor(rng, &[b, h], -1.0, 1.0);
        check_inputs(&[z, c], H, |g, x| {
            let y = g.lstm_cell(x[0], x[1])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
    for_seeds("gru_cell", |rng| {
        let (b, h) = (dim(rng), dim(rng));
        let xs = rand_tensor(rng, &[b, 3 * h], -2.0, 2.0);
        let p = rand_tensor(rng, &[b, 3 * h], -2.0, 2.0);
        let hp = rand_tensor(rng, &[b, h], -1.0, 1.0);
        check_inputs(&[xs, p, hp], H, |g, x| {
            let y = g.gru_cell(x[0], x[1], x[2])?;
            weighted_sum(g, y)
        })
        .unwrap()
    });
}

#[test]
pub fn fused_cells_match_composed_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, h) = (3, 4);
    let z = rand_tensor(&mut rng, &[b, 4 * h], -2.0, 2.0);
    let c = rand_tensor(&mut rng, &[b, h], -1.0, 1.0);
    let mut g = Graph::new();
    let (zv, cv) = (g.input(z), g.input(c));
    let fused = g.lstm_cell(zv, cv).unwrap();
    let gate = |g: &mut Graph<'_>, k: usize| g.slice(zv, 1, k * h, h).unwrap();
    let (i, f, gg, o) = (
        gate(&mut g, 0),
        gate(&mut g, 1),
        gate(&mut g, 2),
        gate(&mut g, 3),
    );
    let (i, f, gg, o) = (g.sigmoid(i), g.sigmoid(f), g.tanh(gg), g.sigmoid(o));
    let fc = g.mul(f, cv).unwrap();
    let ig = g.mul(i, gg).unwrap();
    let c_new = g.add(fc, ig).unwrap();
    let tc = g.tanh(c_new);
    let h_new = g.mul(o, tc).unwrap();
    let composed = g.concat(&[h_new, c_new], 1).unwrap();
    for (a, e) in g.value(fused).data().iter().zip(g.value(composed).data()) {
        assert!((a - e).abs() < 1e-14);
    }

    let mut g = Graph::new();
    let (x, p, hp) = (
        g.input(rand_tensor(&mut rng, &[b, 3 * h], -2.0, 2.0)),
        g.input(rand_tensor(&mut rng, &[b, 3 * h], -2.0, 2.0)),
        g.input(rand_tensor(&mut rng, &[b, h], -1.0, 1.0)),
    );
    let fused = g.gru_cell(x, p, hp).unwrap();
    let part = |g: &mut Graph<'_>, v: Var, k: usize| g.slice(v, 1, k * h, h).unwrap();
    let (xr, xz, xn) = (part(&mut g, x, 0), part(&mut g, x, 1), part(&mut g, x, 2));
    let (pr, pz, pn) = (part(&mut g, p, 0), part(&mut g, p, 1), part(&mut g, p, 2));
    let r = g.add(xr, pr).unwrap();
    let r = g.sigmoid(r);
    let z = g.add(xz, pz).unwrap();
    let z = g.sigmoid(z);
    let rp = g.mul(r, pn).unwrap();
    let n = g.add(xn, rp).unwrap();
    let n = g.tanh(n);
    let d = g.sub(hp, n).unwrap();
    let zd = g.mul(z, d).unwrap();
    let composed = g.add(n, zd).unwrap();
    for (a, e) in g.value(fused).data().iter().zip(g.value(composed).data()) {
        assert!((a - e).abs() < 1e-14);
    }
}

#[test]
pub fn attention_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shape = [2, 5, 6];
    let mut g = Graph::new();
    let q = g.input(rand_tensor(&mut rng, &shape, -3.0, 3.0));
    let k = g.input(rand_tensor(&mut rng, &shape, -3.0, 3.0));
    let y = g.attention(q, k, q, 3).unwrap();
    let w = g.attention_weights(y).unwrap();
    assert_eq!(w.shape(), &[2, 3, 5, 5]);
    for row in w.data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
