//! The reverse-mode tape on a tiny regression: a LayerNorm'd linear layer
//! fitted with Adam, with one finite-difference spot check of the gradient.

use dhmp::autodiff::{Adam, AdamConfig, BoundParams, Matrix, ParamStore, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Matrix::from_vec(
        4,
        3,
        vec![
            0.5, -1.0, 2.0, 1.5, 0.3, -0.7, -0.2, 0.8, 0.1, 1.1, -1.3, 0.4,
        ],
    );
    let y = Matrix::from_vec(4, 2, vec![1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0]);

    let mut store = ParamStore::new();
    let w = store.register(
        "w",
        Matrix::from_vec(3, 2, vec![0.1, -0.2, 0.3, 0.05, -0.1, 0.2]),
    );
    let gain = store.register("gain", Matrix::from_vec(1, 2, vec![1.0, 1.0]));
    let bias = store.register("bias", Matrix::zeros(1, 2));

    let loss_of =
        |store: &ParamStore| -> Result<(Tape, BoundParams, Tensor), Box<dyn std::error::Error>> {
            let mut tape = Tape::new();
            let bp = store.bind(&mut tape)?;
            let xt = tape.constant(x.clone())?;
            let h = tape.matmul(xt, bp.get(w))?;
            let out = tape.layer_norm(h, bp.get(gain), bp.get(bias))?;
            let target = tape.constant(y.clone())?;
            let loss = tape.mse(out, target)?;
            Ok((tape, bp, loss))
        };

    let (tape, bp, loss) = loss_of(&store)?;
    let grads = bp.collect(&tape.backward(loss)?);
    let h = 1e-6;
    let mut plus = store.clone();
    plus.get_mut(w).data[0] += h;
    let mut minus = store.clone();
    minus.get_mut(w).data[0] -= h;
    let value = |s: &ParamStore| loss_of(s).map(|(tape, _, loss)| tape.scalar(loss));
    let fd = (value(&plus)? - value(&minus)?) / (2.0 * h);
    println!(
        "dL/dw[0,0]: tape {:.9}, finite difference {fd:.9}",
        grads[0].data[0]
    );

    let mut adam = Adam::with_config(&store, AdamConfig::default());
    for step in 0..=300 {
        let (tape, bp, loss) = loss_of(&store)?;
        if step % 100 == 0 {
            println!("step {step:>3}: loss {:.6}", tape.scalar(loss));
        }
        let grads = bp.collect(&tape.backward(loss)?);
        adam.apply(&mut store, &grads, 1e-2)?;
    }
    Ok(())
}
