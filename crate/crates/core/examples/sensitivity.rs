//! Compare directions extracted from two disjoint halves of the feature set.

use prefsteer::analysis::{dimensionwise_utest, layerwise_cosine, DEFAULT_ALPHA};
use prefsteer::directions::{default_prompt_pairs, extract_directions};
use prefsteer::toy::{random_model, synthetic_instructions, ToySpec};

fn main() -> prefsteer::Result<()> {
    let model = random_model(&ToySpec::small(), 0);
    let feat = synthetic_instructions(128, 3);
    let pairs = default_prompt_pairs();
    let a = extract_directions(&model, &feat[..64], &pairs)?;
    let b = extract_directions(&model, &feat[64..], &pairs)?;

    for c in a.criteria() {
        let cos = layerwise_cosine(&a, &b, c)?;
        let u = dimensionwise_utest(&a, &b, c, DEFAULT_ALPHA)?;
        println!(
            "{c:>13}: cosine mean {:.3} (min {:.3}), min p {:.3}, {}",
            cos.mean,
            cos.min,
            u.min_p,
            if u.accept {
                "no dimension differs"
            } else {
                "some dimension differs"
            }
        );
    }
    Ok(())
}
