//! Frame the four protocol messages, show their headers, and stream them
//! through an in-memory pipe.

use std::io::Cursor;

use dist_dca::ps::{decode_message, encode_message, read_message, write_message, Payload, WireMessage, FRAME_HEADER_LEN};

fn main() -> dist_dca::Result<()> {
    let grads: Vec<f32> = (0..6).map(|i| i as f32 * 0.25 - 0.5).collect();
    let msgs = [
        WireMessage::FetchParams { worker_id: 3 },
        WireMessage::Params {
            version: 17,
            payload: Payload::from_slice(&[1.0f64, -2.5, 3.25]),
        },
        WireMessage::PushGrad {
            worker_id: 3,
            base_version: 17,
            payload: Payload::from_slice(&grads),
            sample_count: 32,
        },
        WireMessage::Ack { applied_version: 18 },
    ];

    let mut pipe = Vec::new();
    for m in &msgs {
        let bytes = encode_message(m);
        let hex: Vec<String> = bytes[..FRAME_HEADER_LEN].iter().map(|b| format!("{b:02x}")).collect();
        println!("{:>4} bytes, header {}", bytes.len(), hex.join(" "));
        assert_eq!(&decode_message(&bytes)?, m);
        write_message(&mut pipe, m)?;
    }

    let mut r = Cursor::new(pipe);
    let mut n = 0;
    while let Some(m) = read_message(&mut r)? {
        assert_eq!(m, msgs[n]);
        n += 1;
    }
    println!("streamed {n} messages back intact");

    let mut bad = encode_message(&msgs[0]);
    bad[0] = b'X';
    println!("corrupted magic: {}", decode_message(&bad).unwrap_err());
    let full = encode_message(&msgs[2]);
    println!("truncated push: {}", decode_message(&full[..full.len() - 3]).unwrap_err());
    Ok(())
}
