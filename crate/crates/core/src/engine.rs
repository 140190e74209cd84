//! The handles every pipeline operation needs: backends plus templates.

use std::sync::Arc;

use serde_json::{Map, Value};

use crate::backends::{AgentRole, BackendError, Backends, ChatRequest, ImageRef, UserPart};
use crate::templates::{TemplateError, Templates};

#[derive(Debug, thiserror::Error)]
pub enum AskError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Clone)]
pub struct Engine {
    pub backends: Backends,
    pub templates: Arc<Templates>,
}

impl Engine {
    pub fn new(backends: Backends, templates: Templates) -> Self {
        Self { backends, templates: Arc::new(templates) }
    }

    /// Build a request for `role` from its template. `context` carries the
    /// same inputs in structured form.
    pub fn request(
        &self,
        role: AgentRole,
        vars: &[(&str, &str)],
        context: Value,
        images: &[&ImageRef],
    ) -> Result<ChatRequest, TemplateError> {
        let rendered = self.templates.for_role(role, vars)?;
        let mut req = ChatRequest::new(role, rendered.system);
        for image in images {
            req = req.image(image);
        }
        Ok(req.text(rendered.user).with_context(context))
    }

    /// Send a request and return the reply text.
    pub fn ask(&self, request: &ChatRequest) -> Result<String, BackendError> {
        Ok(self.backends.chat(request)?.text)
    }

    /// Send a `StrictJson` request and return the parsed object.
    pub fn ask_json(&self, request: &ChatRequest) -> Result<Map<String, Value>, BackendError> {
        let req = request.clone().json();
        let text = self.ask(&req)?;
        crate::backends::parse_json_object(&text).ok_or(BackendError::MalformedReply {
            attempts: 1,
            last_reply: text,
        })
    }
}

/// A copy of `request` with a repair instruction appended and the re-ask
/// counter in its context bumped.
pub fn reask(request: &ChatRequest, instruction: impl Into<String>) -> ChatRequest {
    let mut req = request.clone();
    req.user_parts.push(UserPart::text(instruction));
    if let Value::Object(map) = &mut req.context {
        let n = map.get("reask").and_then(Value::as_u64).unwrap_or(0);
        map.insert("reask".into(), Value::from(n + 1));
    }
    req
}
