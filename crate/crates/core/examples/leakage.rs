//! Flag test records that share a word 13-gram with the training texts.

use prefsteer::analysis::{ngram_overlap, DEFAULT_NGRAM};
use prefsteer::instructions::InstructionRecord;

fn main() -> prefsteer::Result<()> {
    let train = [
        "Write a short story about a lighthouse keeper who finds a message in a bottle on the shore",
        "List three ways to save money on groceries",
    ];
    let test = vec![
        InstructionRecord::new(
            "t1",
            "Please write a short story about a lighthouse keeper who finds a message in a bottle",
        ),
        InstructionRecord::new("t2", "List three ways to save money on groceries each week"),
        InstructionRecord::new("t3", "Explain how tides work"),
    ];
    let report = ngram_overlap(&train, &test, DEFAULT_NGRAM)?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}
