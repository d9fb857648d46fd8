//! One logical request to a model role, including format reprompts.

use crate::gateway::{AttemptFailure, ChatMessage, ChatRequest, ChatResponse, Gateway, GatewayError, UsageRecord};

/// A single gateway call as seen by the pipeline.
#[derive(Debug, Clone)]
pub struct CallRecord {
    pub endpoint_id: String,
    /// Text of the newest user message.
    pub prompt: String,
    pub has_image: bool,
    pub failed_attempts: Vec<AttemptFailure>,
    pub reply: Result<ChatResponse, GatewayError>,
}

impl CallRecord {
    pub fn usage(&self) -> Option<UsageRecord> {
        self.reply.as_ref().ok().map(|r| UsageRecord {
            endpoint_id: self.endpoint_id.clone(),
            prompt_tokens: r.prompt_tokens,
            completion_tokens: r.completion_tokens,
            approximate: r.approximate_usage,
        })
    }
}

pub(crate) fn call(gateway: &Gateway, endpoint_id: &str, request: &ChatRequest) -> CallRecord {
    let ex = gateway.exchange(endpoint_id, request);
    CallRecord {
        endpoint_id: endpoint_id.to_string(),
        prompt: request.last_user_text().to_string(),
        has_image: request.messages.iter().any(|m| m.image.is_some()),
        failed_attempts: ex.failed_attempts,
        reply: ex.result,
    }
}

#[derive(Debug)]
pub struct Reprompted<T> {
    /// `None` when every reply failed to parse.
    pub parsed: Option<T>,
    /// Text of the last reply received.
    pub last_text: String,
    pub calls: Vec<CallRecord>,
    /// The request as it stood at the last call, used to extend conversations.
    pub request: ChatRequest,
}

#[derive(Debug)]
pub struct ExchangeFailure {
    pub error: GatewayError,
    pub calls: Vec<CallRecord>,
}

/// Send `request`; while the reply does not parse and the reprompt budget
/// lasts, append the reply and a corrective `nudge` and ask again.
pub(crate) fn ask_with_reprompt<T, E>(
    gateway: &Gateway,
    endpoint_id: &str,
    mut request: ChatRequest,
    reprompts: u32,
    nudge: &str,
    parse: impl Fn(&str) -> Result<T, E>,
) -> Result<Reprompted<T>, ExchangeFailure> {
    let mut calls = Vec::new();
    for attempt in 0..=reprompts {
        let record = call(gateway, endpoint_id, &request);
        let text = match &record.reply {
            Ok(r) => r.text.clone(),
            Err(e) => {
                let error = e.clone();
                calls.push(record);
                return Err(ExchangeFailure { error, calls });
            }
        };
        calls.push(record);
        if let Ok(v) = parse(&text) {
            return Ok(Reprompted { parsed: Some(v), last_text: text, calls, request });
        }
        if attempt == reprompts {
            return Ok(Reprompted { parsed: None, last_text: text, calls, request });
        }
        request.messages.push(ChatMessage::assistant(text));
        request.messages.push(ChatMessage::user(nudge));
    }
    unreachable!("loop returns on the last attempt")
}

pub(crate) const FORMAT_NUDGE: &str = "Your previous response did not follow the required output format. \
Respond again using exactly the requested format with the labels Answer:, Reasoning:, and Confidence:.";

pub(crate) const JSON_NUDGE: &str = "Your previous response could not be read as the requested JSON document. \
Respond again with only the JSON document in the requested format.";
