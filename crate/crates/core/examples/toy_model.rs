//! Build a seeded toy model, write it to disk and greedily decode from it.

use prefsteer::runtime::{generate, ModelBundle, SamplingConfig};
use prefsteer::toy::{random_model, ToySpec};

fn main() -> prefsteer::Result<()> {
    let dir = std::env::temp_dir().join("prefsteer-example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("toy.bin");

    random_model(&ToySpec::small(), 0).save_file(&path)?;
    let model = ModelBundle::load_file(&path)?;
    println!(
        "{} layers, d_model {}, hash {}",
        model.n_layers(),
        model.d_model(),
        &model.hash()[..12]
    );

    let prompt = model.tokenizer.chat_prompt("Describe the water cycle.");
    let tokens = generate(&model, &prompt, &SamplingConfig::greedy(32), None)?;
    println!("{:?}", model.tokenizer.decode_lossy(&tokens)?);
    Ok(())
}
