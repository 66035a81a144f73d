//! Cross-attention over a node set: shuffling the query rows shuffles the
//! output rows identically, and shuffling the context rows changes nothing
//! beyond rounding.
//!
//! cargo run --release --example attention_properties

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajaware::nn::{cross_attention, AttentionParams, ParamStore, Tape, Tensor};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn permuted(t: &Tensor, order: &[usize]) -> Tensor {
    Tensor::from_rows(&order.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap()
}

fn main() -> trajaware::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let params = AttentionParams::new(&mut store, "attention", 16, 16, 2, &mut rng)?;
    let neighbours = random(&mut rng, 5, 16);
    let all_nodes = random(&mut rng, 30, 16);

    let attend = |s: &Tensor, ctx: &Tensor| -> trajaware::Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false)?;
        let s = tape.constant(s.clone())?;
        let ctx = tape.constant(ctx.clone())?;
        let out = cross_attention(&mut tape, &bound, &params, s, ctx)?;
        Ok(tape.value(out).clone())
    };

    let base = attend(&neighbours, &all_nodes)?;
    let mut order: Vec<usize> = (0..5).collect();
    order.shuffle(&mut rng);
    let moved = attend(&permuted(&neighbours, &order), &all_nodes)?;
    let exact = order.iter().enumerate().all(|(k, &i)| moved.row(k) == base.row(i));
    println!("query order {order:?}: output rows follow exactly = {exact}");

    let mut ctx_order: Vec<usize> = (0..30).collect();
    ctx_order.shuffle(&mut rng);
    let same = attend(&neighbours, &permuted(&all_nodes, &ctx_order))?;
    println!("context shuffled: max deviation {:.2e}", same.max_abs_diff(&base));
    Ok(())
}
