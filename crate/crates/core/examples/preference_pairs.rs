//! Generate chosen/rejected pairs by decoding each instruction twice with
//! opposite steering.

use prefsteer::directions::{default_prompt_pairs, extract_directions};
use prefsteer::instructions::{filter_instructions, FilterPolicy, InstructionSet, SetRole};
use prefsteer::preference::{build_dataset, SteeringProfile};
use prefsteer::runtime::SamplingConfig;
use prefsteer::toy::{random_model, synthetic_instructions, ToySpec};

fn main() -> prefsteer::Result<()> {
    let model = random_model(&ToySpec::small(), 0);
    let dirs = extract_directions(
        &model,
        &synthetic_instructions(32, 1),
        &default_prompt_pairs(),
    )?;
    let raw = InstructionSet::from_texts(SetRole::Raw, "raw", &synthetic_instructions(40, 2));
    let filt = filter_instructions(&raw, &dirs, &model, &FilterPolicy::top_k(4))?;

    let profile = SteeringProfile::default_for(model.n_layers());
    let mut out = Vec::new();
    let summary = build_dataset(
        &model,
        &filt,
        &dirs,
        &profile,
        &SamplingConfig::greedy(24),
        &mut out,
    )?;
    print!("{}", String::from_utf8_lossy(&out));
    println!("{summary:?}");
    Ok(())
}
