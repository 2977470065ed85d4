use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::time::Duration;

use protbox::keydist::Decision;
use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::http::Response;
use ureq::{Agent, Body};

use crate::dto::*;
use crate::error::{ApiError, DaemonError};
use crate::home::{read_api_token, Home, RuntimeInfo};
use crate::service::{decision_name, Control};

/// [`Control`] over the HTTP API of a running daemon.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    base: String,
    token: String,
    agent: Agent,
}

fn unreachable(e: ureq::Error) -> DaemonError {
    DaemonError::Unreachable(e.to_string())
}

impl RemoteClient {
    pub fn new(addr: SocketAddr, token: impl Into<String>) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(2)))
            .build()
            .into();
        Self {
            base: format!("http://{addr}/v1"),
            token: token.into(),
            agent,
        }
    }

    /// Connects to the daemon recorded in `daemon.json`, if it answers.
    pub fn discover(home: &Home) -> Option<Self> {
        let info = RuntimeInfo::load(home)?;
        let token = read_api_token(home).ok()?;
        let client = Self::new(info.listen, token);
        client.pairs().ok().map(|_| client)
    }

    fn auth(&self) -> String {
        format!("Bearer {}", self.token)
    }

    fn decode<T: DeserializeOwned>(resp: Response<Body>) -> Result<T, DaemonError> {
        let status = resp.status().as_u16();
        let text = resp.into_body().read_to_string().map_err(unreachable)?;
        if (200..300).contains(&status) {
            let text = if text.is_empty() { "null" } else { &text };
            return serde_json::from_str(text).map_err(|e| DaemonError::Unreachable(format!("bad response body: {e}")));
        }
        let mut err: ApiError = serde_json::from_str(&text).unwrap_or_else(|_| ApiError {
            status,
            code: "HttpError".into(),
            message: text,
        });
        err.status = status;
        Err(DaemonError::Remote(err))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, DaemonError> {
        let resp = self
            .agent
            .get(format!("{}{path}", self.base))
            .header("Authorization", self.auth())
            .call()
            .map_err(unreachable)?;
        Self::decode(resp)
    }

    fn send<B: Serialize, T: DeserializeOwned>(&self, method: &str, path: &str, body: Option<&B>) -> Result<T, DaemonError> {
        let url = format!("{}{path}", self.base);
        let auth = self.auth();
        let resp = match (method, body) {
            ("POST", Some(b)) => self.agent.post(url).header("Authorization", auth).send_json(b),
            ("POST", None) => self.agent.post(url).header("Authorization", auth).send_empty(),
            ("PUT", Some(b)) => self.agent.put(url).header("Authorization", auth).send_json(b),
            ("DELETE", _) => self.agent.delete(url).header("Authorization", auth).call(),
            _ => unreachable!("unsupported method {method}"),
        }
        .map_err(unreachable)?;
        Self::decode(resp)
    }

    /// Streams events from `since` and calls `on_event` for each one until it
    /// returns false or the daemon closes the stream.
    pub fn follow_events(&self, since: u64, mut on_event: impl FnMut(EventView) -> bool) -> Result<(), DaemonError> {
        let resp = self
            .agent
            .get(format!("{}/events?since={since}", self.base))
            .header("Authorization", self.auth())
            .header("Accept", "text/event-stream")
            .call()
            .map_err(unreachable)?;
        if !resp.status().is_success() {
            return Self::decode::<()>(resp);
        }
        let reader = BufReader::new(resp.into_body().into_reader());
        for line in reader.lines() {
            let line = line?;
            if let Some(data) = line.strip_prefix("data:") {
                let Ok(ev) = serde_json::from_str::<EventView>(data.trim()) else {
                    continue;
                };
                if !on_event(ev) {
                    break;
                }
            }
        }
        Ok(())
    }
}

fn encode(segment: &str) -> String {
    segment
        .bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

impl Control for RemoteClient {
    fn pairs(&self) -> Result<Vec<PairSummary>, DaemonError> {
        self.get("/pairs")
    }

    fn add_pair(&self, req: &AddPair) -> Result<PairSummary, DaemonError> {
        self.send("POST", "/pairs", Some(req))
    }

    fn remove_pair(&self, pair: &str) -> Result<(), DaemonError> {
        self.send::<(), ()>("DELETE", &format!("/pairs/{}", encode(pair)), None)
    }

    fn inbound_requests(&self) -> Result<Vec<InboundView>, DaemonError> {
        self.get("/requests/inbound")
    }

    fn outbound_requests(&self) -> Result<Vec<OutboundView>, DaemonError> {
        self.get("/requests/outbound")
    }

    fn decide_request(&self, request: &str, decision: Decision) -> Result<DecisionView, DaemonError> {
        let path = format!("/requests/inbound/{}/{}", encode(request), decision_name(decision));
        self.send::<(), _>("POST", &path, None)
    }

    fn hidden(&self, pair: &str) -> Result<Vec<HiddenView>, DaemonError> {
        self.get(&format!("/pairs/{}/hidden", encode(pair)))
    }

    fn restore(&self, pair: &str, req: &RestoreRequest) -> Result<RestoreView, DaemonError> {
        self.send("POST", &format!("/pairs/{}/restore", encode(pair)), Some(req))
    }

    fn policy(&self, pair: &str) -> Result<PolicyView, DaemonError> {
        self.get(&format!("/pairs/{}/policy", encode(pair)))
    }

    fn set_policy(&self, pair: &str, req: &PolicyUpdate) -> Result<PolicyView, DaemonError> {
        self.send("PUT", &format!("/pairs/{}/policy", encode(pair)), Some(req))
    }

    fn quarantine(&self, pair: &str) -> Result<Vec<QuarantineView>, DaemonError> {
        self.get(&format!("/pairs/{}/quarantine", encode(pair)))
    }

    fn events(&self, since: u64) -> Result<Vec<EventView>, DaemonError> {
        self.get(&format!("/events?since={since}"))
    }

    fn acknowledge_events(&self, upto: u64) -> Result<(), DaemonError> {
        self.send("POST", "/events/ack", Some(&Ack { upto }))
    }

    fn backup_decisions(&self) -> Result<Vec<BackupDecisionView>, DaemonError> {
        self.get("/backup-decisions")
    }

    fn resolve_backup_decision(&self, id: &str, keep: bool) -> Result<BackupResolution, DaemonError> {
        self.send("POST", &format!("/backup-decisions/{}", encode(id)), Some(&BackupChoice { keep }))
    }

    fn sync_now(&self) -> Result<Vec<CycleView>, DaemonError> {
        self.send::<(), _>("POST", "/sync", None)
    }
}
