use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::{decode_mask_png, decode_rgb_png, encode_mask_png, encode_rgb_png, BinaryMask, RgbImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image_b64: String,
    pub inner_mask_b64: String,
    pub prompt: String,
    pub guidance_scale: f64,
    pub steps: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRequest {
    pub image_b64: String,
    pub strength: f64,
    pub guidance_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractMaskRequest {
    pub image_b64: String,
    pub object_name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub control_mask_b64: String,
    pub prompt: String,
    pub steps: u32,
    pub guidance_scale: f64,
    pub control_strength: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub mask_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub caption: String,
}

pub fn b64_encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn b64_decode(text: &str) -> Result<Vec<u8>> {
    STANDARD
        .decode(text)
        .map_err(|e| Error::Format(format!("base64: {e}")))
}

pub fn image_to_b64(image: &RgbImage) -> Result<String> {
    Ok(b64_encode(&encode_rgb_png(image)?))
}

pub fn image_from_b64(text: &str) -> Result<RgbImage> {
    decode_rgb_png(&b64_decode(text)?)
}

pub fn mask_to_b64(mask: &BinaryMask) -> Result<String> {
    Ok(b64_encode(&encode_mask_png(mask)?))
}

pub fn mask_from_b64(text: &str) -> Result<BinaryMask> {
    decode_mask_png(&b64_decode(text)?)
}

/// The five neural operations of the generation pipelines.
pub trait GenerativeService: Send + Sync {
    fn inpaint(&self, req: &InpaintRequest) -> Result<ImageResponse>;
    fn refine(&self, req: &RefineRequest) -> Result<ImageResponse>;
    fn extract_mask(&self, req: &ExtractMaskRequest) -> Result<MaskResponse>;
    fn generate(&self, req: &GenerateRequest) -> Result<ImageResponse>;
    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse>;
}

/// Exponential backoff: attempt `k` (k >= 1) waits `base * 2^(k-1)` first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    /// Three retries after 0.5, 1 and 2 seconds.
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// One failed attempt; `retryable` decides whether another one is made.
#[derive(Debug)]
pub struct AttemptError {
    pub error: Error,
    pub retryable: bool,
}

impl RetryPolicy {
    pub fn delays(&self) -> Vec<Duration> {
        (0..self.retries).map(|k| self.base_delay * 2u32.pow(k)).collect()
    }

    pub fn run<T>(&self, mut attempt: impl FnMut() -> Result<T, AttemptError>) -> Result<T> {
        let mut delays = self.delays().into_iter();
        loop {
            match attempt() {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable => match delays.next() {
                    Some(d) => std::thread::sleep(d),
                    None => return Err(e.error),
                },
                Err(e) => return Err(e.error),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn default_backoff_schedule() {
        let d = RetryPolicy::default().delays();
        assert_eq!(d, vec![Duration::from_millis(500), Duration::from_secs(1), Duration::from_secs(2)]);
    }

    #[test]
    fn retries_then_gives_up() {
        let policy = RetryPolicy { retries: 3, base_delay: Duration::ZERO };
        let calls = Cell::new(0);
        let r: Result<()> = policy.run(|| {
            calls.set(calls.get() + 1);
            Err(AttemptError { error: Error::Transport("down".into()), retryable: true })
        });
        assert!(matches!(r, Err(Error::Transport(_))));
        assert_eq!(calls.get(), 4);
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let policy = RetryPolicy { retries: 3, base_delay: Duration::ZERO };
        let calls = Cell::new(0);
        let r: Result<()> = policy.run(|| {
            calls.set(calls.get() + 1);
            Err(AttemptError { error: Error::Transport("400".into()), retryable: false })
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn recovers_after_transient_failure() {
        let policy = RetryPolicy { retries: 3, base_delay: Duration::ZERO };
        let calls = Cell::new(0);
        let r = policy.run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 3 {
                Err(AttemptError { error: Error::Transport("503".into()), retryable: true })
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);
    }

    #[test]
    fn wire_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| [x as u8, y as u8, 9]);
        assert_eq!(image_from_b64(&image_to_b64(&img).unwrap()).unwrap(), img);
        let m = BinaryMask::from_fn(4, 4, |x, y| x == y);
        assert_eq!(mask_from_b64(&mask_to_b64(&m).unwrap()).unwrap(), m);
        assert!(b64_decode("!!").is_err());
    }
}
