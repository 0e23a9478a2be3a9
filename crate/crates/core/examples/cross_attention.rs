// Runs the tiny model on a generated clip, then inspects the attention
// between the current frame and its fused predecessors.

use freespace::alignment::{encode_frame, prefuse, FeatureMap};
use freespace::config::ModelConfig;
use freespace::fusion::{cross_attend, spatial_attend, Model};
use freespace::synthgen::{generate_sequence, SceneSpec};

fn main() -> freespace::Result<()> {
    let cfg = ModelConfig::tiny();
    let model = Model::new(cfg.clone(), 1)?;
    let mut spec = SceneSpec::still(0, 5, (56, 56), 28.0);
    spec.texture_amplitude = 0.5;
    let seq = generate_sequence(&spec)?;

    let current = &seq.frames[4];
    let f_x = encode_frame(current, model.params(), &cfg)?;
    let previous: Vec<FeatureMap> = [3, 1]
        .iter()
        .map(|&i| encode_frame(&seq.frames[i], model.params(), &cfg))
        .collect::<freespace::Result<_>>()?;
    let f_pre = prefuse(&previous, current.timestamp, model.params(), &cfg)?;
    let (fused, weights) = cross_attend(&f_x, &f_pre, model.params(), &cfg)?;
    for (head, w) in weights.iter().enumerate() {
        let n = w.shape()[1];
        let row = &w.data()[..n];
        let (arg, max) = row.iter().enumerate().fold((0, 0.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        println!("head {head}: query 0 attends most to cell {arg} (weight {max:.4}, uniform {:.4})", 1.0 / n as f64);
    }
    let (_, gate) = spatial_attend(&fused, model.params(), &cfg)?;
    let mean = gate.data.iter().sum::<f64>() / gate.data.len() as f64;
    println!("mean spatial gate {mean:.3}");
    let logits = model.forward(current, &[&seq.frames[3], &seq.frames[1]])?;
    println!("logits {:?}", logits.shape());
    Ok(())
}
