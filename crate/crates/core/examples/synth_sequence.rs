//! One synthetic scene with a curved, drifting shoreline, reflections and
//! camera shake, written to disk with its jitter trace.
//!
//! ```text
//! cargo run --release --example synth_sequence -- /tmp/scene
//! ```

use std::path::PathBuf;

use freespace::synthgen::{generate_with_trace, save_generated, JitterSpec, SceneSpec, Shoreline};

fn main() -> freespace::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scene".into()));
    let spec = SceneSpec {
        shoreline: Shoreline {
            control_rows: vec![52.0, 60.0, 56.0, 64.0],
            drift_px: 2.0,
            drift_period_frames: 24.0,
        },
        reflection_strength: 0.6,
        texture_amplitude: 0.6,
        jitter: JitterSpec::default(),
        ..SceneSpec::still(3, 12, (112, 112), 56.0)
    };
    let g = generate_with_trace(&spec, "scene")?;
    for s in &g.trace.frames {
        println!(
            "frame {:2}  shift ({:+.2}, {:+.2}) px  rotation {:+.3} deg  water {:.1}%",
            s.frame,
            s.shift_x,
            s.shift_y,
            s.rot_deg,
            100.0 * g.sequence.frames[s.frame].mask.as_ref().unwrap().count_ones() as f64 / (112.0 * 112.0)
        );
    }
    save_generated(&g, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
