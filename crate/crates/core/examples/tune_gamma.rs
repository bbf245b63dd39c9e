//! Pick the two steering strengths from reward sweeps.
//!
//! The first half feeds fixed tables through the selection rule. The second
//! half sweeps a planted model with the projection scorer.

use prefsteer::instructions::{Assignment, InstructionRecord};
use prefsteer::runtime::SamplingConfig;
use prefsteer::toy::{synthetic_instructions, PlantedModel, ToySpec};
use prefsteer::tuner::*;

fn table(rows: &[(f64, f64)]) -> prefsteer::Result<SweepTable> {
    SweepTable::new(
        rows.iter()
            .map(|&(gamma, mean_reward)| SweepRow {
                gamma,
                mean_reward,
                std: None,
                n: 1,
            })
            .collect(),
    )
}

fn main() -> prefsteer::Result<()> {
    let pos = table(&[
        (0.01, 17.435),
        (0.03, 17.483),
        (0.05, 17.511),
        (0.1, 17.624),
        (0.3, 17.021),
        (0.5, 16.742),
    ])?;
    let neg = table(&[
        (-0.01, 17.229),
        (-0.03, 17.188),
        (-0.05, 17.162),
        (-0.1, 16.213),
        (-0.3, 15.210),
        (-0.5, 14.445),
    ])?;
    let props = ProportionTable::new(
        [
            (-0.01, 0.872),
            (-0.03, 0.898),
            (-0.05, 0.935),
            (-0.1, 0.948),
            (-0.3, 0.992),
            (-0.5, 0.998),
        ]
        .iter()
        .map(|&(gamma_neg, proportion)| ProportionRow {
            gamma_pos: 0.1,
            gamma_neg,
            proportion,
        })
        .collect(),
    )?;
    println!(
        "tables: {:?}",
        select_gammas(&pos, &neg, &props, MIN_PROPORTION)?
    );

    let planted = PlantedModel::new(&ToySpec::small(), 7, b'x' as u32, 3.0);
    let dirs = planted.directions(&["general"]);
    let recs: Vec<InstructionRecord> = synthetic_instructions(16, 1)
        .into_iter()
        .enumerate()
        .map(|(i, t)| InstructionRecord {
            assigned: Some(Assignment {
                criterion: "general".into(),
                score: 0.0,
            }),
            ..InstructionRecord::new(format!("r{i}"), t)
        })
        .collect();
    let scorer = ProjectionScorer::new(&planted.model, &dirs)?;
    let s = SamplingConfig::greedy(8);
    let sweep = gamma_sweep(
        &planted.model,
        &recs,
        &dirs,
        &[-0.1, 0.0, 0.1, 0.5],
        (1, 3),
        &scorer,
        &s,
    )?;
    let mut out = Vec::new();
    sweep.write_tsv(&mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}
