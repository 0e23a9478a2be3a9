// Saves a model to a checkpoint archive and loads it back.

use freespace::checkpoint::{self, CheckpointMeta};
use freespace::config::ModelConfig;
use freespace::fusion::Model;

fn main() -> freespace::Result<()> {
    let model = Model::new(ModelConfig::tiny(), 42)?;
    let dir = std::env::temp_dir().join("freespace-checkpoint-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("model.ckpt");
    checkpoint::save(&model, &CheckpointMeta::default(), &path)?;
    let (back, meta) = checkpoint::load(&path)?;
    println!(
        "{} parameters, {} bytes on disk, identical after reload: {}",
        back.parameter_count(),
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        back == model
    );
    println!("iterations recorded: {}", meta.iterations_done);
    Ok(())
}
