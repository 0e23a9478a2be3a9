// Deformable convolution: with zero offsets it is an ordinary 3x3
// convolution; a uniform half-cell offset blends neighbouring pixels.

use freespace::alignment::{deform_conv_with_offsets, OffsetField};
use freespace::autograd::Graph;
use freespace::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> freespace::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (c, h, w, k) = (3, 8, 8, 3);
    let input = Tensor::from_fn(&[c, h, w], |_| rng.random_range(-1.0..1.0));
    let weight = Tensor::from_fn(&[4, c, k, k], |_| rng.random_range(-0.5..0.5));

    let zero = OffsetField {
        offsets: Tensor::zeros(&[2 * k * k, h, w]),
        kernel: k,
    };
    let deformed = deform_conv_with_offsets(&input, &zero, &weight, None)?;

    let mut g = Graph::new();
    let (x, wv) = (g.constant(input.clone()), g.constant(weight.clone()));
    let y = g.conv2d(x, wv, None, 1, k / 2);
    println!("zero offsets vs conv2d: max |diff| = {:.2e}", deformed.max_abs_diff(g.value(y)));

    let half = OffsetField {
        offsets: Tensor::full(&[2 * k * k, h, w], 0.5),
        kernel: k,
    };
    let shifted = deform_conv_with_offsets(&input, &half, &weight, None)?;
    println!(
        "half-cell offsets change the output by up to {:.3}",
        shifted.max_abs_diff(&deformed)
    );
    Ok(())
}
