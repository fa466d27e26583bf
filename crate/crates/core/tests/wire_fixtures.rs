//! Byte-level wire images frozen against an independent encoder. A failure
//! here means captures from older builds stop parsing: change the protocol
//! version, not the fixtures.

use orbitsim::messages::{decode, encode, hash_key, Message, Meta, OpCode};
use std::sync::Arc;

fn unhex(s: &str) -> Vec<u8> {
    assert!(s.len() % 2 == 0);
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

fn roundtrip(msg: &Message, hex: &str) {
    let want = unhex(hex);
    let got = encode(msg).expect("fixture encodes");
    assert_eq!(hex::encode(&got), hex::encode(&want));
    assert_eq!(&decode(&want).expect("fixture decodes"), msg);
}

mod hex {
    pub fn encode(b: &[u8]) -> String {
        b.iter().map(|x| format!("{x:02x}")).collect()
    }
}

#[test]
fn key_hash_fixtures() {
    assert_eq!(hash_key(b"AAAA"), 0x6883D8A760757277B806E92E125AE1B1);
    assert_eq!(hash_key(b"DDDD"), 0x686B45BC3E757277B806E92648EF4A0D);
    assert_eq!(hash_key(&[b'k'; 16]), 0xE673CE25C42802A0D10FC11B722F211D);
}

#[test]
fn read_request_image() {
    let msg = Message::new(
        OpCode::ReadRequest,
        7,
        hash_key(b"AAAA"),
        Arc::from(&b"AAAA"[..]),
        Arc::from(&[][..]),
    );
    roundtrip(
        &msg,
        "01000000076883d8a760757277b806e92e125ae1b1000004000041414141000000000000",
    );
}

#[test]
fn cached_read_reply_image() {
    let mut msg = Message::new(
        OpCode::ReadReply,
        0xDEADBEEF,
        hash_key(b"DDDD"),
        Arc::from(&b"DDDD"[..]),
        Arc::from(&[0u8, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10][..]),
    );
    msg.flag = 1;
    msg.meta = Meta { cached: 1, latency_us: 1234, srv_id: 9 };
    roundtrip(
        &msg,
        "03deadbeef686b45bc3e757277b806e92648ef4a0d010004000b44444444000102030405060708090a01000004d209",
    );
}

#[test]
fn correction_request_image() {
    let msg = Message::new(
        OpCode::CorrectionRequest,
        1,
        hash_key(&[b'k'; 16]),
        Arc::from(&[b'k'; 16][..]),
        Arc::from(&[b'v'; 32][..]),
    );
    let image = format!(
        "0700000001e673ce25c42802a0d10fc11b722f211d0000100020{}{}000000000000",
        "6b".repeat(16),
        "76".repeat(32)
    );
    roundtrip(&msg, &image);
}
