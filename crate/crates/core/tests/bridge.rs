//! Engine side of the model bridge protocol: replay of a recorded session and
//! a conformance run against an in-process stub server.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, Cursor, Write};
use std::path::Path;

use image::RgbImage;
use ovimap_core::scene_io::{PixelMask, PixelRect};
use ovimap_core::semantics::{BridgeClient, BridgeRequest, BridgeResponse, CropKey, FeatureProvider};
use ovimap_core::ProviderError;
use serde_json::Value;

struct Transcript {
    handshake: Value,
    pairs: Vec<(BridgeRequest, BridgeResponse)>,
}

fn load_transcript() -> Transcript {
    let text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/bridge_transcript.jsonl"),
    )
    .unwrap();
    let mut lines = text.lines().map(|l| serde_json::from_str::<Value>(l).unwrap());
    let handshake = lines.next().unwrap()["handshake"].clone();
    let pairs = lines
        .map(|v| {
            (
                serde_json::from_value(v["request"].clone()).unwrap(),
                serde_json::from_value(v["response"].clone()).unwrap(),
            )
        })
        .collect();
    Transcript { handshake, pairs }
}

fn file_name(p: &Option<std::path::PathBuf>) -> Option<String> {
    p.as_ref()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
}

#[test]
fn replays_recorded_session() {
    let t = load_transcript();
    let mut server = format!("{}\n", t.handshake);
    for (_, resp) in &t.pairs {
        server.push_str(&serde_json::to_string(resp).unwrap());
        server.push('\n');
    }
    let mut sent = Vec::new();
    {
        let mut c = BridgeClient::connect(Cursor::new(server.into_bytes()), &mut sent).unwrap();
        assert_eq!(c.dim(), 4);
        assert_eq!(c.describe()["models"]["embedder"], "stub");

        let image = RgbImage::from_pixel(64, 64, image::Rgb([200, 10, 10]));
        let bbox = PixelRect { x0: 10, y0: 20, x1: 50, y1: 60 };
        let mask = PixelMask::from_indices(64, 64, (20..60).flat_map(|r| (10..50).map(move |c| r * 64 + c)).collect());
        let key = CropKey { frame_index: 0, instance: 1, crop: 0 };

        let a = c.embed_text("chair").unwrap();
        let b = c.embed_text("chair").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values, t.pairs[0].1.embedding.clone().unwrap());
        let region = c.embed_image_region(&image, bbox, key).unwrap();
        assert_eq!(region.values, t.pairs[2].1.embedding.clone().unwrap());
        let masked = c.embed_masked_region(&image, bbox, &mask, CropKey { crop: 1, ..key }).unwrap();
        assert_eq!(masked.values, t.pairs[3].1.embedding.clone().unwrap());
        match c.embed_text("") {
            Err(ProviderError::Backend(m)) => assert_eq!(m, "empty text"),
            other => panic!("expected backend error, got {other:?}"),
        }
        let ids = c.segment(Path::new("000000.png")).unwrap();
        assert_eq!(ids, Path::new("000000.ids.png"));
        assert_eq!(c.embed_text("lamp").unwrap().dim(), 4);
    }

    let requests: Vec<BridgeRequest> = sent
        .as_slice()
        .lines()
        .map(|l| serde_json::from_str(&l.unwrap()).unwrap())
        .collect();
    assert_eq!(requests.len(), t.pairs.len());
    for (got, (want, _)) in requests.iter().zip(&t.pairs) {
        assert_eq!(got.id, want.id);
        assert_eq!(got.op, want.op);
        assert_eq!(got.bbox, want.bbox);
        assert_eq!(got.text, want.text);
        assert_eq!(file_name(&got.image_path), file_name(&want.image_path));
        assert_eq!(file_name(&got.mask_path), file_name(&want.mask_path));
    }
}

#[test]
fn truncated_session_is_a_protocol_error() {
    let t = load_transcript();
    let server = format!("{}\n", t.handshake);
    let mut c = BridgeClient::connect(Cursor::new(server.into_bytes()), Vec::new()).unwrap();
    assert!(matches!(c.embed_text("chair"), Err(ProviderError::Protocol(_))));
}

const STUB_DIM: usize = 16;

/// Hash-based embedder: the vector depends only on the request content.
fn stub_embedding(req: &BridgeRequest) -> Vec<f64> {
    let mut h = DefaultHasher::new();
    (&req.op, &req.text, &req.bbox).hash(&mut h);
    let mut state = h.finish();
    (0..STUB_DIM)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

/// Serves requests until the client hangs up; returns the ids it saw.
fn serve(input: impl BufRead, mut output: impl Write) -> Vec<u64> {
    writeln!(output, "{}", serde_json::json!({"dim": STUB_DIM, "models": {"embedder": "stub"}})).unwrap();
    let mut seen = Vec::new();
    for line in input.lines() {
        let req: BridgeRequest = serde_json::from_str(&line.unwrap()).unwrap();
        seen.push(req.id);
        let resp = BridgeResponse {
            id: req.id,
            ok: true,
            embedding: Some(stub_embedding(&req)),
            mask_file: None,
            error: None,
        };
        writeln!(output, "{}", serde_json::to_string(&resp).unwrap()).unwrap();
    }
    seen
}

#[test]
fn hundred_requests_against_stub() {
    let (req_rx, req_tx) = std::io::pipe().unwrap();
    let (resp_rx, resp_tx) = std::io::pipe().unwrap();
    let server = std::thread::spawn(move || serve(BufReader::new(req_rx), resp_tx));

    let image = RgbImage::from_pixel(32, 32, image::Rgb([0, 0, 255]));
    let mask = PixelMask::from_indices(32, 32, vec![0, 1, 33]);
    let mut c = BridgeClient::connect(BufReader::new(resp_rx), req_tx).unwrap();
    let mut by_text = std::collections::HashMap::new();
    for i in 0..100u32 {
        let key = CropKey { frame_index: (i / 10) as usize, instance: i % 3, crop: 0 };
        let bbox = PixelRect { x0: i % 8, y0: 0, x1: 16 + i % 8, y1: 16 };
        let e = match i % 3 {
            0 => {
                let text = format!("object {}", i % 5);
                let e = c.embed_text(&text).unwrap();
                if let Some(prev) = by_text.insert(text, e.clone()) {
                    assert_eq!(prev, e, "text embedding changed between calls");
                }
                e
            }
            1 => c.embed_image_region(&image, bbox, key).unwrap(),
            _ => c.embed_masked_region(&image, bbox, &mask, key).unwrap(),
        };
        assert_eq!(e.dim(), STUB_DIM);
    }
    drop(c);
    let seen = server.join().unwrap();
    assert_eq!(seen, (1..=100).collect::<Vec<u64>>());
}
