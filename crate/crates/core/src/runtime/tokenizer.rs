//! Byte-level tokenizer: ids 0..=255 are raw bytes, followed by three specials.

use crate::error::{Error, Result};

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const SEP: u32 = 258;
pub const VOCAB_SIZE: usize = 259;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    /// Byte ids only, no specials.
    pub fn encode(&self, text: impl AsRef<[u8]>) -> Vec<u32> {
        text.as_ref().iter().map(|&b| b as u32).collect()
    }

    /// `encode` with BOS prepended, for the start of a fresh sequence.
    pub fn encode_fresh(&self, text: impl AsRef<[u8]>) -> Vec<u32> {
        let text = text.as_ref();
        let mut out = Vec::with_capacity(text.len() + 1);
        out.push(BOS);
        out.extend(text.iter().map(|&b| b as u32));
        out
    }

    /// Inverse of `encode`. Special ids are dropped.
    pub fn decode(&self, tokens: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            match t {
                0..=255 => out.push(t as u8),
                256..=258 => {}
                _ => return Err(Error::UnknownTokenId(t)),
            }
        }
        Ok(out)
    }

    /// `decode` followed by lossy UTF-8 conversion.
    pub fn decode_lossy(&self, tokens: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode(tokens)?).into_owned())
    }

    /// `BOS instruction` — the sequence scored for inherent consistency.
    pub fn instruction_tokens(&self, instruction: &str) -> Vec<u32> {
        self.encode_fresh(instruction)
    }

    /// `BOS system SEP instruction` — a system prompt joined to an instruction.
    pub fn with_system_prompt(&self, system: &str, instruction: &str) -> Vec<u32> {
        let mut out = self.encode_fresh(system);
        out.push(SEP);
        out.extend(self.encode(instruction));
        out
    }

    /// `BOS instruction SEP` — the response is decoded after SEP.
    pub fn chat_prompt(&self, instruction: &str) -> Vec<u32> {
        let mut out = self.encode_fresh(instruction);
        out.push(SEP);
        out
    }
}
