//! Score instructions by how strongly they align with each criterion and keep
//! the top ones.

use prefsteer::directions::{default_prompt_pairs, extract_directions};
use prefsteer::instructions::{filter_instructions, FilterPolicy, InstructionSet, SetRole};
use prefsteer::toy::{random_model, synthetic_instructions, ToySpec};

fn main() -> prefsteer::Result<()> {
    let model = random_model(&ToySpec::small(), 0);
    let dirs = extract_directions(
        &model,
        &synthetic_instructions(32, 1),
        &default_prompt_pairs(),
    )?;
    let raw = InstructionSet::from_texts(SetRole::Raw, "raw", &synthetic_instructions(60, 2));

    let policy = FilterPolicy {
        dedup: true,
        ..FilterPolicy::top_k(5)
    };
    let kept = filter_instructions(&raw, &dirs, &model, &policy)?;
    for r in &kept.records {
        let a = r.assigned.as_ref().unwrap();
        println!("{:>8.3} {:<13} {}", a.score, a.criterion, r.text);
    }
    Ok(())
}
