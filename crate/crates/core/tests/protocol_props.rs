mod common;

use common::{crc_oracle, frame_oracle, stuff_oracle};
use drawstring_core::protocol::{crc16, stuff, unstuff, Decoder, Instruction, InstructionPacket, StatusPacket};
use proptest::prelude::*;

fn any_id() -> impl Strategy<Value = u8> {
    0u8..=252
}

/// Payloads biased towards the header pattern so stuffing gets exercised.
fn payload() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop_oneof![3 => any::<u8>(), 1 => Just(0xFF), 1 => Just(0xFD)], 0..300)
}

#[test]
fn ping_one_is_the_documented_frame() {
    let frame = InstructionPacket::ping(1).encode().unwrap();
    assert_eq!(frame, [0xFF, 0xFF, 0xFD, 0x00, 0x01, 0x03, 0x00, 0x01, 0x19, 0x4E]);
    assert_eq!(frame, frame_oracle(1, 0x01, &[]));
}

#[test]
fn read_matches_hand_framing() {
    let frame = InstructionPacket::read(1, 132, 4).encode().unwrap();
    assert_eq!(frame, [0xFF, 0xFF, 0xFD, 0x00, 0x01, 0x07, 0x00, 0x02, 0x84, 0x00, 0x04, 0x00, 0x1D, 0x15]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn crc_table_matches_bitwise(data in prop::collection::vec(any::<u8>(), 0..256)) {
        prop_assert_eq!(crc16(&data), crc_oracle(&data));
    }

    #[test]
    fn status_round_trip(id in any_id(), error in 0u8..=7, alert in any::<bool>(), params in payload()) {
        let error = error | if alert { 0x80 } else { 0 };
        let packet = StatusPacket::new(id, error, params.clone());
        let bytes = packet.encode().unwrap();
        let mut payload = vec![error];
        payload.extend_from_slice(&params);
        prop_assert_eq!(&bytes, &frame_oracle(id, 0x55, &payload));
        let mut d = Decoder::new();
        let out = d.decode_step(&bytes);
        prop_assert!(out.errors.is_empty(), "{:?}", out.errors);
        prop_assert_eq!(out.packets, vec![packet]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn instruction_round_trip(id in any_id(), params in payload()) {
        let packet = InstructionPacket::new(id, Instruction::Write, params.clone());
        let bytes = packet.encode().unwrap();
        prop_assert_eq!(&bytes, &frame_oracle(id, Instruction::Write.code(), &params));
        let mut d = Decoder::new();
        let frames = d.push_frames(&bytes);
        prop_assert_eq!(frames.packets.len(), 1);
        let back = frames.packets.into_iter().next().unwrap().into_instruction().unwrap();
        prop_assert_eq!(back, packet);
    }

    #[test]
    fn stuffing_is_invertible(data in payload()) {
        let s = stuff(&data);
        prop_assert_eq!(&s, &stuff_oracle(&data));
        prop_assert_eq!(unstuff(&s), data);
        prop_assert!(!contains_unstuffed_header(&s));
    }

    #[test]
    fn resyncs_after_garbage(
        garbage in prop::collection::vec(any::<u8>(), 0..=64),
        id in any_id(),
        params in payload(),
    ) {
        let packet = StatusPacket::new(id, 0, params);
        let mut stream = garbage;
        stream.extend(packet.encode().unwrap());
        stream.extend(packet.encode().unwrap());
        let mut d = Decoder::new();
        let mut got = Vec::new();
        for chunk in stream.chunks(7) {
            got.extend(d.decode_step(chunk).packets);
        }
        // Noise may swallow the first frame but never the second.
        prop_assert!(!got.is_empty() && got.len() <= 2, "{}", got.len());
        prop_assert_eq!(got.last().unwrap(), &packet);
    }

    #[test]
    fn chunking_is_irrelevant(id in any_id(), params in payload(), split in 1usize..40) {
        let packet = StatusPacket::new(id, 0, params);
        let bytes = packet.encode().unwrap();
        let mut d = Decoder::new();
        let mut got = Vec::new();
        for chunk in bytes.chunks(split) {
            got.extend(d.decode_step(chunk).packets);
        }
        prop_assert_eq!(got, vec![packet]);
    }
}

/// FF FF FD followed by anything other than the escape byte.
fn contains_unstuffed_header(s: &[u8]) -> bool {
    s.windows(4).any(|w| w[..3] == [0xFF, 0xFF, 0xFD] && w[3] != 0xFD)
}
