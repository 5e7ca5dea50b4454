use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

use super::service::{
    AttemptError, CaptionRequest, CaptionResponse, ExtractMaskRequest, GenerateRequest, GenerativeService,
    ImageResponse, InpaintRequest, MaskResponse, RefineRequest, RetryPolicy,
};

const MAX_RESPONSE_BYTES: u64 = 512 * 1024 * 1024;

/// Blocking JSON-over-HTTP client for the generative service.
///
/// Transport failures and 5xx responses are retried per the policy; 4xx
/// responses fail immediately.
#[derive(Debug, Clone)]
pub struct HttpServiceClient {
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpServiceClient {
    pub fn new(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: ureq::Agent::new_with_config(config),
            retry,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Q: Serialize, R: DeserializeOwned>(&self, endpoint: &str, req: &Q) -> Result<R> {
        let url = format!("{}/{endpoint}", self.base_url);
        self.retry.run(|| {
            let mut resp = self.agent.post(&url).send_json(req).map_err(|e| AttemptError {
                error: Error::Transport(format!("POST {url}: {e}")),
                retryable: true,
            })?;
            let status = resp.status().as_u16();
            if status >= 400 {
                let body = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(AttemptError {
                    error: Error::Transport(format!("POST {url}: status {status}: {body}")),
                    retryable: status >= 500,
                });
            }
            resp.body_mut()
                .with_config()
                .limit(MAX_RESPONSE_BYTES)
                .read_json()
                .map_err(|e| AttemptError {
                    error: Error::Transport(format!("POST {url}: bad response body: {e}")),
                    retryable: false,
                })
        })
    }
}

impl GenerativeService for HttpServiceClient {
    fn inpaint(&self, req: &InpaintRequest) -> Result<ImageResponse> {
        self.post("inpaint", req)
    }

    fn refine(&self, req: &RefineRequest) -> Result<ImageResponse> {
        self.post("refine", req)
    }

    fn extract_mask(&self, req: &ExtractMaskRequest) -> Result<MaskResponse> {
        self.post("extract_mask", req)
    }

    fn generate(&self, req: &GenerateRequest) -> Result<ImageResponse> {
        self.post("generate", req)
    }

    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse> {
        self.post("caption", req)
    }
}
