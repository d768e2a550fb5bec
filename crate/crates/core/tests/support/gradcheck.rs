//! Finite-difference checks shared by the gradient tests and the
//! acceptance run.

use std::sync::Arc;

use dhmp::autodiff::{gumbel_softmax_st, Matrix, Tape, Tensor};
use dhmp::mesh::generate_grid_mesh;
use dhmp::model::{node_input_matrix, ForwardOptions, Model, ModelConfig, Variant};
use dhmp::noise::{keyed_uniform, KeyedNoise};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect(),
    )
}

/// `||a - n|| / (||a|| + ||n||)`, zero when both vanish.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Loss is `sum(f(inputs) * w)` for a fixed random `w`, so every output entry
/// carries a distinct weight.
pub fn check_op(seed: u64, inputs: Vec<Matrix>, f: impl Fn(&mut Tape, &[Tensor]) -> Tensor) -> f64 {
    let weights = |tape: &mut Tape, out: Tensor| {
        let (r, c) = out.shape();
        let w = Matrix::from_vec(
            r,
            c,
            (0..r * c)
                .map(|k| keyed_uniform(seed, &[k as u64]) - 0.3)
                .collect(),
        );
        let w = tape.constant(w).unwrap();
        let p = tape.mul(out, w).unwrap();
        tape.sum(p).unwrap()
    };
    let eval = |values: &[Matrix]| {
        let mut tape = Tape::new();
        let ts: Vec<Tensor> = values
            .iter()
            .map(|m| tape.leaf(m.clone(), true).unwrap())
            .collect();
        let out = f(&mut tape, &ts);
        let loss = weights(&mut tape, out);
        (tape.scalar(loss), tape, ts, loss)
    };
    let (_, tape, ts, loss) = eval(&inputs);
    let grads = tape.backward(loss).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (k, t) in ts.iter().enumerate() {
        analytic.extend(grads.get_or_zeros(*t).data);
        for e in 0..inputs[k].data.len() {
            let mut plus = inputs.clone();
            plus[k].data[e] += H;
            let mut minus = inputs.clone();
            minus[k].data[e] -= H;
            numeric.push((eval(&plus).0 - eval(&minus).0) / (2.0 * H));
        }
    }
    relative_error(&analytic, &numeric)
}

/// Inputs kept away from the kinks of relu and the poles of reciprocal.
pub fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let v: f64 = rng.gen_range(0.2..2.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
}

/// Relative error of every op on three random instances each.
pub fn op_suite() -> Vec<(String, f64)> {
    let mut results = Vec::new();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let a = random(&mut rng, r, c, -1.0, 1.0);
        let b = random(&mut rng, r, c, -1.0, 1.0);
        let k = random(&mut rng, c, 3, -1.0, 1.0);
        let row = random(&mut rng, 1, c, -1.0, 1.0);
        let col = random(&mut rng, r, 1, -1.0, 1.0);
        let signed = away_from_zero(&mut rng, r, c);
        let segments: Vec<usize> = {
            let mut s: Vec<usize> = (0..r).map(|_| rng.gen_range(0..3)).collect();
            s.sort_unstable();
            s
        };
        let index: Arc<[usize]> = (0..r + 2).map(|_| rng.gen_range(0..r)).collect();
        let scatter_to: Arc<[usize]> = (0..r).map(|_| rng.gen_range(0..4)).collect();

        type Case = (
            &'static str,
            Vec<Matrix>,
            Box<dyn Fn(&mut Tape, &[Tensor]) -> Tensor>,
        );
        let cases: Vec<Case> = vec![
            (
                "matmul",
                vec![a.clone(), k.clone()],
                Box::new(|t, x| t.matmul(x[0], x[1]).unwrap()),
            ),
            (
                "add",
                vec![a.clone(), b.clone()],
                Box::new(|t, x| t.add(x[0], x[1]).unwrap()),
            ),
            (
                "sub",
                vec![a.clone(), b.clone()],
                Box::new(|t, x| t.sub(x[0], x[1]).unwrap()),
            ),
            (
                "mul",
                vec![a.clone(), b.clone()],
                Box::new(|t, x| t.mul(x[0], x[1]).unwrap()),
            ),
            (
                "add_row",
                vec![a.clone(), row.clone()],
                Box::new(|t, x| t.add_row(x[0], x[1]).unwrap()),
            ),
            (
                "mul_col",
                vec![a.clone(), col.clone()],
                Box::new(|t, x| t.mul_col(x[0], x[1]).unwrap()),
            ),
            (
                "scale",
                vec![a.clone()],
                Box::new(|t, x| t.scale(x[0], -1.7).unwrap()),
            ),
            (
                "relu",
                vec![signed.clone()],
                Box::new(|t, x| t.relu(x[0]).unwrap()),
            ),
            (
                "sigmoid",
                vec![a.clone()],
                Box::new(|t, x| t.sigmoid(x[0]).unwrap()),
            ),
            (
                "reciprocal",
                vec![signed.clone()],
                Box::new(|t, x| t.reciprocal(x[0]).unwrap()),
            ),
            (
                "concat_cols",
                vec![a.clone(), col.clone(), b.clone()],
                Box::new(|t, x| t.concat_cols(&[x[0], x[1], x[2]]).unwrap()),
            ),
            (
                "layer_norm",
                vec![a.clone(), row.clone(), random(&mut rng, 1, c, -1.0, 1.0)],
                Box::new(|t, x| t.layer_norm(x[0], x[1], x[2]).unwrap()),
            ),
            (
                "gather_rows",
                vec![a.clone()],
                Box::new({
                    let index = Arc::clone(&index);
                    move |t, x| t.gather_rows(x[0], Arc::clone(&index)).unwrap()
                }),
            ),
            (
                "scatter_add_rows",
                vec![a.clone()],
                Box::new({
                    let to = Arc::clone(&scatter_to);
                    move |t, x| t.scatter_add_rows(x[0], Arc::clone(&to), 4).unwrap()
                }),
            ),
            (
                "segment_softmax",
                vec![random(&mut rng, r, 1, -3.0, 3.0)],
                Box::new({
                    let segments = segments.clone();
                    move |t, x| t.segment_softmax(x[0], &segments).unwrap()
                }),
            ),
            (
                "sum_rows",
                vec![a.clone()],
                Box::new(|t, x| t.sum_rows(x[0]).unwrap()),
            ),
            (
                "sum",
                vec![a.clone()],
                Box::new(|t, x| t.sum(x[0]).unwrap()),
            ),
            (
                "mse",
                vec![a.clone(), b.clone()],
                Box::new(|t, x| t.mse(x[0], x[1]).unwrap()),
            ),
            (
                "straight_through",
                vec![a.clone()],
                Box::new(|t, x| {
                    let soft = t.sigmoid(x[0]).unwrap();
                    let hard = t.value(soft).clone();
                    t.straight_through(hard, soft).unwrap()
                }),
            ),
            (
                "gumbel_softmax_relaxed",
                vec![col.clone(), random(&mut rng, r, 1, -1.0, 1.0)],
                Box::new({
                    let noise: Vec<[f64; 2]> = (0..r).map(|i| [0.1 * i as f64, -0.2]).collect();
                    move |t, x| gumbel_softmax_st(t, x[0], x[1], 0.7, &noise).unwrap().soft
                }),
            ),
        ];
        for (name, inputs, f) in cases {
            let err = check_op(seed * 100 + results.len() as u64, inputs, f);
            results.push((format!("{name} (seed {seed})"), err));
        }
    }
    results
}

pub fn model_check(variant: Variant, levels: usize, nx: usize, ny: usize, seed: u64) -> f64 {
    let mesh = generate_grid_mesh(nx, ny, 0.2, seed).unwrap();
    assert!(mesh.node_count <= 16);
    let config = ModelConfig {
        variant,
        levels,
        latent: 4,
        hidden: 5,
        node_input: 4,
        flat_passes: 2,
        init_seed: seed,
        ..Default::default()
    };
    let mut model = Model::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    // zero biases put self-loop edges exactly on a relu kink
    for m in model.params.values_mut() {
        m.data
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    let fields = random(&mut rng, mesh.node_count, 1, -1.0, 1.0);
    let x = node_input_matrix(&fields, &mesh.node_types);
    let target = random(&mut rng, mesh.node_count, 1, -1.0, 1.0);
    let opts = ForwardOptions {
        temperature: 0.8,
        soft_gate: true,
    };
    let noise = KeyedNoise::new(seed, 3);
    let loss_of = |model: &Model| {
        let mut tape = Tape::new();
        let bp = model.bind(&mut tape).unwrap();
        let out = model
            .forward(&mut tape, &bp, &mesh, &x, &opts, &noise)
            .unwrap();
        let t = tape.constant(target.clone()).unwrap();
        let loss = tape.mse(out.prediction, t).unwrap();
        let masks: Vec<Vec<bool>> = out.levels.iter().map(|l| l.keep_mask.clone()).collect();
        (tape, bp, loss, masks)
    };
    let (tape, bp, loss, masks) = loss_of(&model);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = bp
        .collect(&grads)
        .into_iter()
        .flat_map(|m| m.data)
        .collect();
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for &id in &ids {
        for e in 0..model.params.get(id).data.len() {
            let orig = model.params.get(id).data[e];
            let mut side = |delta: f64| {
                model.params.get_mut(id).data[e] = orig + delta;
                let (tape, _, loss, m) = loss_of(&model);
                assert_eq!(m, masks, "a perturbation flipped a hard selection");
                tape.scalar(loss)
            };
            let (p, q) = (side(H), side(-H));
            model.params.get_mut(id).data[e] = orig;
            numeric.push((p - q) / (2.0 * H));
        }
    }
    relative_error(&analytic, &numeric)
}

/// Relative error of the full relaxed forward pass for every variant.
pub fn model_suite() -> Vec<(String, f64)> {
    let cases = [
        (Variant::Dhmp, 3, 4, 4, 1),
        (Variant::Dhmp, 2, 3, 4, 2),
        (Variant::Dhmp, 3, 4, 3, 3),
        (Variant::M1, 3, 4, 4, 4),
        (Variant::M2, 3, 4, 4, 5),
        (Variant::M3, 3, 4, 4, 6),
        (Variant::Flat, 1, 4, 4, 7),
    ];
    cases
        .into_iter()
        .map(|(variant, levels, nx, ny, seed)| {
            (
                format!("{variant:?} L={levels} {nx}x{ny}"),
                model_check(variant, levels, nx, ny, seed),
            )
        })
        .collect()
}
