// How reversed playback and periodic frame drops reshape a sequence.

use freespace::data::{Frame, FrameSequence, RgbFrame, Split};
use freespace::harness::{apply_condition, RobustnessCondition};

fn main() -> freespace::Result<()> {
    let frames = (0..15)
        .map(|t| Frame::new(RgbFrame::filled(4, 4, [0.5; 3]), t, None))
        .collect::<freespace::Result<Vec<_>>>()?;
    let seq = FrameSequence::new("demo", frames, Split::Test)?;
    for cond in RobustnessCondition::grid() {
        let out = apply_condition(&seq, &cond)?;
        let ts: Vec<String> = out.frames.iter().map(|f| f.timestamp.to_string()).collect();
        println!("{:<14} {:2} frames: {}", cond.label(), out.len(), ts.join(" "));
    }
    Ok(())
}
