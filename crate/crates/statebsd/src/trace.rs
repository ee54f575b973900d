//! Trace persistence: one JSON object per line, one line per retired
//! instruction, with the instruction word as a 4-hex-digit string.

use crate::isa::{EncodedInstruction, TraceRecord, Word};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {0}: {1}")]
    Malformed(usize, String),
    #[error("corrupt trace: {0}")]
    CorruptTrace(String),
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    step: u32,
    pc: Word,
    inst: String,
    rw: Option<(u8, Word)>,
    mw: Option<(Word, Word)>,
    npc: Word,
    lat: u32,
}

pub fn to_jsonl(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        let line = TraceLine {
            step: r.step,
            pc: r.pc_before,
            inst: format!("{:04x}", r.inst.bits()),
            rw: r.reg_write,
            mw: r.mem_write,
            npc: r.next_pc,
            lat: r.latency,
        };
        out.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(line)
            .map_err(|e| TraceError::Malformed(idx + 1, e.to_string()))?;
        if parsed.inst.len() != 4 {
            return Err(TraceError::Malformed(idx + 1, format!("inst `{}` is not 4 hex digits", parsed.inst)));
        }
        let bits = u16::from_str_radix(&parsed.inst, 16)
            .map_err(|e| TraceError::Malformed(idx + 1, e.to_string()))?;
        out.push(TraceRecord {
            step: parsed.step,
            pc_before: parsed.pc,
            inst: EncodedInstruction(bits),
            reg_write: parsed.rw,
            mem_write: parsed.mw,
            next_pc: parsed.npc,
            latency: parsed.lat,
        });
    }
    validate(&out)?;
    Ok(out)
}

/// Self-consistency checks that do not need the program: steps are
/// sequential and each record's pc chains from the previous `npc`.
pub fn validate(trace: &[TraceRecord]) -> Result<(), TraceError> {
    for (i, r) in trace.iter().enumerate() {
        if r.step != i as u32 {
            return Err(TraceError::CorruptTrace(format!(
                "record {i} has step {}, expected {i}",
                r.step
            )));
        }
        crate::isa::decode(r.inst)
            .map_err(|e| TraceError::CorruptTrace(format!("record {i}: {e}")))?;
        if i > 0 && trace[i - 1].next_pc != r.pc_before {
            return Err(TraceError::CorruptTrace(format!(
                "record {i} pc {:#06x} does not chain from previous npc {:#06x}",
                r.pc_before,
                trace[i - 1].next_pc
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::isa::run_single;

    #[test]
    fn jsonl_roundtrip() {
        let p = assemble("ADDI r1, r0, 3\nSW r1, 2(r0)\nLW r2, 2(r0)\nHALT\n").unwrap();
        let out = run_single(&p, 100).unwrap();
        let text = to_jsonl(&out.trace);
        let back = from_jsonl(&text).unwrap();
        assert_eq!(back, out.trace);
        // Spot-check the wire format of the first line.
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["inst"], "6203");
        assert_eq!(first["rw"], serde_json::json!([1, 3]));
        assert_eq!(first["mw"], serde_json::Value::Null);
    }

    #[test]
    fn corrupt_chain_detected() {
        let p = assemble("ADDI r1, r0, 3\nADDI r2, r0, 4\nHALT\n").unwrap();
        let mut trace = run_single(&p, 100).unwrap().trace;
        trace[1].pc_before = 9;
        assert!(matches!(validate(&trace), Err(TraceError::CorruptTrace(_))));
    }
}
