// Channel gates produced for increasing frame gaps by a freshly
// initialized tiny model.

use freespace::alignment::temporal_gate;
use freespace::config::ModelConfig;
use freespace::fusion::Model;

fn main() -> freespace::Result<()> {
    let model = Model::new(ModelConfig::tiny(), 0)?;
    for dt in [1, 2, 4, 8, 16] {
        let g = temporal_gate(dt, model.params(), model.config())?;
        let head: Vec<String> = g.gate.iter().take(6).map(|v| format!("{v:.3}")).collect();
        println!("dt {dt:2}: {} ...", head.join(" "));
    }
    Ok(())
}
