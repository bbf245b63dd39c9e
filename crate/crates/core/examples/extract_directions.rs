//! Extract per-layer criterion directions from contrastive system prompts.

use prefsteer::directions::{default_prompt_pairs, extract_directions};
use prefsteer::toy::{random_model, synthetic_instructions, ToySpec};

fn main() -> prefsteer::Result<()> {
    let model = random_model(&ToySpec::small(), 0);
    let feat = synthetic_instructions(64, 1);
    let set = extract_directions(&model, &feat, &default_prompt_pairs())?;

    for c in set.criteria() {
        let first = set.layer(c, 1).unwrap();
        println!("{c:>13}: layer 1 starts {:?}", &first[..4]);
    }
    let path = std::env::temp_dir().join("prefsteer-directions.bin");
    set.save_file(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
