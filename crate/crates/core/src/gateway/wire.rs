//! Chat-completions wire format.

use base64::Engine;
use serde_json::{json, Value};

use super::{ChatMessage, ChatRequest, ImagePayload, Role};

pub fn encode_request(model: &str, temperature: f32, request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request.messages.iter().map(encode_message).collect();
    json!({
        "model": model,
        "messages": messages,
        "temperature": temperature,
    })
}

fn encode_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    };
    match &m.image {
        None => json!({ "role": role, "content": m.text }),
        Some(image) => {
            let url = match image {
                ImagePayload::Inline { bytes, media_type } => format!(
                    "data:{media_type};base64,{}",
                    base64::engine::general_purpose::STANDARD.encode(bytes.as_ref())
                ),
                ImagePayload::Url(u) => u.clone(),
            };
            json!({
                "role": role,
                "content": [
                    { "type": "text", "text": m.text },
                    { "type": "image_url", "image_url": { "url": url } },
                ],
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedResponse {
    pub content: String,
    pub usage: Option<(u64, u64)>,
}

/// Pull `choices[0].message.content` and `usage` out of a response body.
pub fn decode_response(body: &str) -> Result<DecodedResponse, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON body: {e}"))?;
    let message = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| "missing choices[0].message".to_string())?;
    let content = match message.get("content") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        // some servers return content parts
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Some(other) => return Err(format!("unexpected content type: {other}")),
    };
    let usage = v.get("usage").and_then(|u| {
        let p = u.get("prompt_tokens")?.as_u64()?;
        let c = u.get("completion_tokens")?.as_u64()?;
        Some((p, c))
    });
    Ok(DecodedResponse { content, usage })
}
