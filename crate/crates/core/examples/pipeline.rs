//! Run every stage end to end on a toy model, then run it again and show that
//! nothing is recomputed.

use prefsteer::pipeline::{run_pipeline, PipelineConfig, Sizes};
use prefsteer::runtime::SamplingConfig;
use prefsteer::toy::{random_model, ToySpec};

fn main() -> prefsteer::Result<()> {
    let dir = std::env::temp_dir().join("prefsteer-pipeline-example");
    std::fs::create_dir_all(&dir).unwrap();
    let model = dir.join("model.bin");
    random_model(&ToySpec::small(), 0).save_file(&model)?;

    let mut config = PipelineConfig::new(&model, dir.join("run"));
    config.sizes = Sizes {
        feat: 64,
        raw: 200,
        filt: 50,
    };
    config.sampling = SamplingConfig::greedy(32);
    config.synthesis = SamplingConfig::temperature(1.0, 48, 0);
    println!("{}", config.to_toml()?);

    for attempt in ["first", "second"] {
        let m = run_pipeline(&config)?;
        println!("{attempt} run:");
        for s in &m.stages {
            println!("  {:<20} {:>6} ms  reused={}", s.name, s.wall_ms, s.reused);
        }
        println!(
            "  {} pairs, {} generation passes",
            m.summary.pairs, m.summary.total_passes
        );
    }
    Ok(())
}
