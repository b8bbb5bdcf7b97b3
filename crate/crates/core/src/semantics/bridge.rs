//! Client for an external model process speaking newline-delimited JSON.
//!
//! The process first writes a handshake line `{"dim": D, "models": {...}}`,
//! then answers one request per line in order. Images and masks are exchanged
//! as file paths; the client writes them into a scratch directory.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{CropKey, Embedding, FeatureProvider};
use crate::error::ProviderError;
use crate::scene_io::{PixelMask, PixelRect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub dim: usize,
    #[serde(default)]
    pub models: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub id: u64,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[u32; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct BridgeClient<R, W> {
    reader: R,
    writer: W,
    handshake: Handshake,
    next_id: u64,
    scratch: tempfile::TempDir,
    /// Frame whose color image is currently written to the scratch directory.
    cached_frame: Option<usize>,
    child: Option<Child>,
}

fn protocol(msg: impl Into<String>) -> ProviderError {
    ProviderError::Protocol(msg.into())
}

impl<R: BufRead, W: Write> BridgeClient<R, W> {
    /// Reads the handshake line and returns a ready client.
    pub fn connect(mut reader: R, writer: W) -> Result<Self, ProviderError> {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(protocol("bridge closed before handshake"));
        }
        let handshake: Handshake = serde_json::from_str(line.trim_end())
            .map_err(|e| protocol(format!("bad handshake {:?}: {e}", line.trim_end())))?;
        if handshake.dim == 0 {
            return Err(protocol("handshake announced dimension 0"));
        }
        log::info!("bridge connected, dim {}", handshake.dim);
        Ok(Self {
            reader,
            writer,
            handshake,
            next_id: 1,
            scratch: tempfile::tempdir()?,
            cached_frame: None,
            child: None,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    /// Sends one request and waits for its response. Ids are checked against the echo.
    pub fn call(&mut self, mut req: BridgeRequest) -> Result<BridgeResponse, ProviderError> {
        req.id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&req).map_err(|e| protocol(e.to_string()))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;

        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(protocol(format!("bridge closed while awaiting id {}", req.id)));
        }
        let resp: BridgeResponse = serde_json::from_str(buf.trim_end())
            .map_err(|e| protocol(format!("bad response {:?}: {e}", buf.trim_end())))?;
        if resp.id != req.id {
            return Err(protocol(format!(
                "response id {} does not echo request id {}",
                resp.id, req.id
            )));
        }
        if !resp.ok {
            return Err(ProviderError::Backend(
                resp.error.unwrap_or_else(|| "unspecified bridge error".into()),
            ));
        }
        Ok(resp)
    }

    fn embed(&mut self, req: BridgeRequest) -> Result<Embedding, ProviderError> {
        let resp = self.call(req)?;
        let values = resp
            .embedding
            .ok_or_else(|| protocol(format!("response {} carries no embedding", resp.id)))?;
        let e = Embedding::new(values);
        e.check(self.handshake.dim)?;
        Ok(e)
    }

    fn frame_image(&mut self, image: &RgbImage, frame_index: usize) -> Result<PathBuf, ProviderError> {
        let path = self.scratch.path().join("frame.png");
        if self.cached_frame != Some(frame_index) {
            image
                .save(&path)
                .map_err(|e| ProviderError::Backend(format!("cannot write crop image: {e}")))?;
            self.cached_frame = Some(frame_index);
        }
        Ok(path)
    }

    fn write_mask(&self, mask: &PixelMask) -> Result<PathBuf, ProviderError> {
        let path = self.scratch.path().join("mask.png");
        let mut img = GrayImage::new(mask.width, mask.height);
        for &p in mask.pixels() {
            img.put_pixel(p % mask.width, p / mask.width, image::Luma([255]));
        }
        img.save(&path)
            .map_err(|e| ProviderError::Backend(format!("cannot write mask image: {e}")))?;
        Ok(path)
    }

    /// Asks the bridge to segment an image; returns the written 16-bit id-map path.
    pub fn segment(&mut self, image_path: &Path) -> Result<PathBuf, ProviderError> {
        let resp = self.call(BridgeRequest {
            id: 0,
            op: "segment".into(),
            image_path: Some(image_path.to_path_buf()),
            bbox: None,
            mask_path: None,
            text: None,
        })?;
        resp.mask_file
            .ok_or_else(|| protocol(format!("response {} carries no mask file", resp.id)))
    }
}

fn bbox_array(b: PixelRect) -> [u32; 4] {
    [b.x0, b.y0, b.x1, b.y1]
}

impl BridgeClient<BufReader<ChildStdout>, ChildStdin> {
    /// Launches `program args...` and connects to its stdio.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ProviderError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ProviderError::Backend(format!("cannot launch bridge {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::connect(BufReader::new(stdout), stdin)?;
        client.child = Some(child);
        Ok(client)
    }
}

impl<R, W> Drop for BridgeClient<R, W> {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl<R: BufRead + Send, W: Write + Send> FeatureProvider for BridgeClient<R, W> {
    fn dim(&self) -> usize {
        self.handshake.dim
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "bridge",
            "dim": self.handshake.dim,
            "models": self.handshake.models,
        })
    }

    fn embed_image_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        let image_path = self.frame_image(image, key.frame_index)?;
        self.embed(BridgeRequest {
            id: 0,
            op: "embed_region".into(),
            image_path: Some(image_path),
            bbox: Some(bbox_array(bbox)),
            mask_path: None,
            text: None,
        })
    }

    fn embed_masked_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        mask: &PixelMask,
        key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        let image_path = self.frame_image(image, key.frame_index)?;
        let mask_path = self.write_mask(mask)?;
        self.embed(BridgeRequest {
            id: 0,
            op: "embed_masked".into(),
            image_path: Some(image_path),
            bbox: Some(bbox_array(bbox)),
            mask_path: Some(mask_path),
            text: None,
        })
    }

    fn embed_text(&mut self, text: &str) -> Result<Embedding, ProviderError> {
        self.embed(BridgeRequest {
            id: 0,
            op: "embed_text".into(),
            image_path: None,
            bbox: None,
            mask_path: None,
            text: Some(text.to_string()),
        })
    }
}
