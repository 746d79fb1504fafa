//! Inter-cell request/response messages.
//!
//! Byte layout (all fields big-endian, no header):
//!
//! ```text
//! offset 0            : cell_id      u16
//! offset 2            : rfc_index    ceil(B/8) bytes, value right-aligned,
//!                                    unused high bits zero
//! offset 2+ceil(B/8)  : round        u32
//! ```
//!
//! A response uses the same layout and carries the assigned index. Only the
//! `B` index bits count as coordination payload in the signaling ledger.

use crate::codebook::RfcCodebook;
use crate::coordination::CoordinationRound;
use crate::error::{contract_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Request,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XnMessage {
    pub kind: MessageKind,
    pub cell_id: u16,
    pub rfc_index: u32,
    pub round: u32,
}

fn index_bytes(bits: u32) -> usize {
    bits.div_ceil(8) as usize
}

/// Encoded size of one message for a codebook of index width `bits`.
pub fn encoded_len(bits: u32) -> usize {
    2 + index_bytes(bits) + 4
}

impl XnMessage {
    pub fn encode(&self, cb: &RfcCodebook) -> Result<Vec<u8>> {
        cb.entry(self.rfc_index as usize)?;
        let n = index_bytes(cb.bits());
        let mut out = Vec::with_capacity(encoded_len(cb.bits()));
        out.extend_from_slice(&self.cell_id.to_be_bytes());
        let idx = (self.rfc_index as u64).to_be_bytes();
        out.extend_from_slice(&idx[8 - n..]);
        out.extend_from_slice(&self.round.to_be_bytes());
        Ok(out)
    }

    pub fn decode(kind: MessageKind, bytes: &[u8], cb: &RfcCodebook) -> Result<Self> {
        let n = index_bytes(cb.bits());
        if bytes.len() != encoded_len(cb.bits()) {
            return Err(Error::Parse(format!(
                "Xn message is {} bytes, expected {}",
                bytes.len(),
                encoded_len(cb.bits())
            )));
        }
        let cell_id = u16::from_be_bytes([bytes[0], bytes[1]]);
        let index = bytes[2..2 + n]
            .iter()
            .fold(0u64, |acc, b| (acc << 8) | *b as u64);
        if cb.bits() < 64 && index >> cb.bits() != 0 {
            return contract_err(format!("padding bits set in index field {index:#x}"));
        }
        let rfc_index = u32::try_from(index)
            .map_err(|_| Error::Contract(format!("index {index} does not fit")))?;
        cb.entry(rfc_index as usize)?;
        let r = &bytes[2 + n..];
        Ok(XnMessage {
            kind,
            cell_id,
            rfc_index,
            round: u32::from_be_bytes([r[0], r[1], r[2], r[3]]),
        })
    }
}

/// The request and response messages a round puts on the interface. The
/// master's own request stays local.
pub fn round_messages(round: &CoordinationRound, round_no: u32, master: usize) -> Vec<XnMessage> {
    if !round.policy.is_codebook_coordinated() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(2 * round.requests.len());
    for (req, asg) in round.requests.iter().zip(&round.assignments) {
        if req.cell_id == master {
            continue;
        }
        out.push(XnMessage {
            kind: MessageKind::Request,
            cell_id: req.cell_id as u16,
            rfc_index: req.requested_index as u32,
            round: round_no,
        });
        out.push(XnMessage {
            kind: MessageKind::Response,
            cell_id: asg.cell_id as u16,
            rfc_index: asg.assigned_index as u32,
            round: round_no,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::CodebookConfig;
    use crate::coordination::{coordinate_round, CoordinationPolicy, RfcRequest};
    use proptest::prelude::*;

    #[test]
    fn layout_is_exact() {
        let cb = RfcCodebook::build(&CodebookConfig::default()).unwrap();
        let m = XnMessage {
            kind: MessageKind::Request,
            cell_id: 0x0102,
            rfc_index: 69,
            round: 0xA0B0C0D0,
        };
        assert_eq!(m.encode(&cb).unwrap(), vec![0x01, 0x02, 69, 0xA0, 0xB0, 0xC0, 0xD0]);
        let mut bad = m.encode(&cb).unwrap();
        bad[2] = 0x80;
        assert!(XnMessage::decode(MessageKind::Request, &bad, &cb).is_err());
        assert!(XnMessage::decode(MessageKind::Request, &bad[..5], &cb).is_err());
    }

    #[test]
    fn round_emits_two_messages_per_slave() {
        let cb = RfcCodebook::build(&CodebookConfig::n55()).unwrap();
        let reqs: Vec<_> = (0..21)
            .map(|c| RfcRequest {
                cell_id: c,
                requested_index: c % 10,
                requested_ratio: cb.ratio_of(c % 10).unwrap(),
            })
            .collect();
        let round = coordinate_round(&reqs, &cb, 3, CoordinationPolicy::RfcbcbOption2).unwrap();
        let msgs = round_messages(&round, 7, 0);
        assert_eq!(msgs.len(), 40);
        let payload: u64 = msgs.iter().map(|_| cb.bits() as u64).sum();
        assert_eq!(payload, 240);
        assert_eq!(payload, round.signaling_bits(cb.bits()));
    }

    proptest! {
        #[test]
        fn messages_round_trip(cell in any::<u16>(), idx in 0u32..70, round in any::<u32>()) {
            let cb = RfcCodebook::build(&CodebookConfig::default()).unwrap();
            let m = XnMessage { kind: MessageKind::Response, cell_id: cell, rfc_index: idx, round };
            let bytes = m.encode(&cb).unwrap();
            prop_assert_eq!(bytes.len(), encoded_len(cb.bits()));
            prop_assert_eq!(XnMessage::decode(MessageKind::Response, &bytes, &cb).unwrap(), m);
        }
    }
}
