// Riffle two channel groups and undo it again.
//
// cargo run --example shuffle_demo

use shuffle_vit::shuffle::{channel_shuffle_tensor, channel_unshuffle_tensor, inverse_riffle_permutation, riffle_permutation};
use shuffle_vit::Tensor;

pub fn run_example() -> shuffle_vit::Result<Vec<usize>> {
    let width = 8;
    let perm = riffle_permutation(width)?;
    println!("riffle  {perm:?}");
    println!("inverse {:?}", inverse_riffle_permutation(width)?);

    // one token whose channel values are their own indices
    let x = Tensor::from_fn(&[1, 1, width], |i| i as f64);
    let y = channel_shuffle_tensor(&x)?;
    println!("shuffled channels {:?}", y.data());
    assert_eq!(channel_unshuffle_tensor(&y)?, x);
    Ok(perm)
}

fn main() -> shuffle_vit::Result<()> {
    run_example().map(|_| ())
}
