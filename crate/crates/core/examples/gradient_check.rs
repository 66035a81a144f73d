//! The reverse-mode tape on a small GraphSAGE + dense network: gradients
//! from one backward pass against central finite differences.
//!
//! cargo run --release --example gradient_check

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajaware::nn::{dense, graphsage_layer, DenseParams, ParamStore, SageLayerParams, Tape, Tensor};

fn main() -> trajaware::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let sage = SageLayerParams::new(&mut store, "sage", 3, 4, &mut rng);
    let head = DenseParams::new(&mut store, "head", 4, 1, &mut rng);
    let lists = Arc::new(vec![vec![1, 2], vec![0], vec![0, 3], vec![2]]);
    let x = Tensor::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let loss = |store: &ParamStore, grads: bool| -> trajaware::Result<(f64, Vec<Option<Tensor>>)> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, grads)?;
        let input = tape.constant(x.clone())?;
        let h = graphsage_layer(&mut tape, &bound, &sage, input, Arc::clone(&lists))?;
        let out = dense(&mut tape, &bound, &head, h)?;
        let sq = tape.mul(out, out)?;
        let l = tape.sum(sq)?;
        let value = tape.value(l).item();
        if !grads {
            return Ok((value, Vec::new()));
        }
        tape.backward(l)?;
        Ok((value, bound.grads(&tape)))
    };

    let (value, grads) = loss(&store, true)?;
    println!("loss {value:.6}");
    let eps = 1e-5;
    let ids: Vec<_> = store.ids().collect();
    for (id, g) in ids.into_iter().zip(grads) {
        let g = g.expect("every parameter reaches the loss");
        let mut worst = 0.0f64;
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let up = loss(&store, false)?.0;
            store.get_mut(id).data_mut()[i] = orig - eps;
            let down = loss(&store, false)?.0;
            store.get_mut(id).data_mut()[i] = orig;
            worst = worst.max(((up - down) / (2.0 * eps) - g.data()[i]).abs());
        }
        println!("{:<16} {:>3} values, max |analytic - numeric| = {worst:.2e}", store.name(id), g.len());
    }
    Ok(())
}
