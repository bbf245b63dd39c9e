//! Steer a planted model along its direction and watch the target logit move.

use prefsteer::runtime::{generate, SamplingConfig, Session, BOS, SEP};
use prefsteer::toy::{PlantedModel, ToySpec};

fn main() -> prefsteer::Result<()> {
    let planted = PlantedModel::new(&ToySpec::small(), 7, b'x' as u32, 3.0);
    let dirs = planted.directions(&["general"]);
    let prompt = [BOS, b'h' as u32, b'i' as u32, SEP];

    for gamma in [-0.5f32, -0.1, 0.0, 0.1, 0.5] {
        let spec = dirs.steering("general", 1, 3, gamma)?;
        let mut s = Session::new(&planted.model);
        for &t in &prompt[..3] {
            s.step(t, None, None)?;
        }
        let x = s.step(prompt[3], Some(&spec), None)?;
        let logit = s.logits(&x)[planted.target as usize];

        let out = generate(
            &planted.model,
            &prompt,
            &SamplingConfig::greedy(12),
            Some(&spec),
        )?;
        let text = planted.model.tokenizer.decode_lossy(&out)?;
        println!("gamma {gamma:>5}: target logit {logit:>8.3}  {text:?}");
    }
    Ok(())
}
