//! Writes the ten-sequence synthetic waterway benchmark.
//!
//! ```text
//! cargo run --release --example generate_benchmark -- /tmp/bench 0
//! ```

use std::path::PathBuf;

use freespace::data::Split;
use freespace::synthgen::{generate_benchmark, BenchmarkOptions};

fn main() -> freespace::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "benchmark".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let index = generate_benchmark(seed, &out, &BenchmarkOptions::default())?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split}: {}", index.ids(split).join(" "));
    }
    println!("wrote {}", out.display());
    Ok(())
}
