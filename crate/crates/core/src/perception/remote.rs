use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::error::{PerceptionError, Result};
use crate::sim::{Observation, TaskSpec};

use super::{PerceptionReport, Perceiver, PhaseMemory};

/// JSON messages for `POST /perceive`.
pub mod wire {
    use serde::{Deserialize, Serialize};

    use crate::error::PerceptionError;
    use crate::perception::{DirectionHint, LocatedEntity, PerceptionReport, SwitchWeight};
    use crate::sim::{BoundingBox, Observation, END_EFFECTOR_ID};

    pub const FORMAT: u32 = 1;
    /// Minimum overlap for a returned box to be attributed to an entity.
    pub const MATCH_IOU: f64 = 0.5;

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct Request {
        pub format: u32,
        pub request_id: String,
        /// Row-major color indices.
        pub image: Vec<u8>,
        pub width: usize,
        pub height: usize,
        pub instruction: String,
        pub phase: String,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct Response {
        pub request_id: String,
        pub sub_goal_box: [f64; 4],
        pub interference_boxes: Vec<[f64; 4]>,
        pub end_effector_box: [f64; 4],
        pub d_hat: [i64; 3],
        pub r_hat: [i64; 3],
        pub g: i64,
        pub switch_weight: f64,
    }

    fn to_box(b: &[f64; 4]) -> Result<BoundingBox, PerceptionError> {
        if b.iter().any(|v| !v.is_finite()) || b[2] < b[0] || b[3] < b[1] {
            return Err(PerceptionError::Malformed(format!("bad box {b:?}")));
        }
        Ok(BoundingBox::new(b[0], b[1], b[2], b[3]))
    }

    /// Attributes a box to the best-overlapping non-end-effector entity.
    fn match_entity(b: &[f64; 4], obs: &Observation) -> Result<LocatedEntity, PerceptionError> {
        let bbox = to_box(b)?;
        let best = obs
            .boxes
            .iter()
            .filter(|(id, _)| id.as_str() != END_EFFECTOR_ID)
            .map(|(id, known)| (id, bbox.iou(known)))
            .fold(None::<(&String, f64)>, |acc, (id, iou)| match acc {
                Some((_, best)) if best >= iou => acc,
                _ => Some((id, iou)),
            });
        match best {
            Some((id, iou)) if iou > MATCH_IOU => Ok(LocatedEntity { id: id.clone(), bbox }),
            _ => Err(PerceptionError::Malformed(format!("box {b:?} matches no entity"))),
        }
    }

    fn component(v: i64) -> Result<i8, PerceptionError> {
        match v {
            -1..=1 => Ok(v as i8),
            _ => Err(PerceptionError::Malformed(format!("direction component {v} not in {{-1, 0, 1}}"))),
        }
    }

    pub fn encode(report: &PerceptionReport, request_id: &str) -> Response {
        Response {
            request_id: request_id.to_string(),
            sub_goal_box: report.sub_goal.bbox.as_array(),
            interference_boxes: report.interference.iter().map(|e| e.bbox.as_array()).collect(),
            end_effector_box: report.end_effector.as_array(),
            d_hat: report.hint.d_hat.map(i64::from),
            r_hat: report.hint.r_hat.map(i64::from),
            g: i64::from(report.hint.g),
            switch_weight: report.switch_weight.value(),
        }
    }

    /// Validates a response and resolves its boxes against `obs`.
    pub fn decode(resp: &Response, expected_id: &str, obs: &Observation) -> Result<PerceptionReport, PerceptionError> {
        if resp.request_id != expected_id {
            return Err(PerceptionError::Malformed(format!(
                "request id mismatch: sent {expected_id}, got {}",
                resp.request_id
            )));
        }
        let d_hat = [component(resp.d_hat[0])?, component(resp.d_hat[1])?, component(resp.d_hat[2])?];
        let r_hat = [component(resp.r_hat[0])?, component(resp.r_hat[1])?, component(resp.r_hat[2])?];
        let g = match resp.g {
            0 | 1 => resp.g as u8,
            other => return Err(PerceptionError::Malformed(format!("gripper {other} not in {{0, 1}}"))),
        };
        let switch_weight =
            SwitchWeight::try_from(resp.switch_weight).map_err(|e| PerceptionError::Malformed(e.to_string()))?;
        Ok(PerceptionReport {
            end_effector: to_box(&resp.end_effector_box)?,
            sub_goal: match_entity(&resp.sub_goal_box, obs)?,
            interference: resp
                .interference_boxes
                .iter()
                .map(|b| match_entity(b, obs))
                .collect::<Result<_, _>>()?,
            hint: DirectionHint { d_hat, r_hat, g },
            switch_weight,
        })
    }
}

/// Forwards observations to an HTTP service speaking [`wire`].
pub struct RemotePerceiver {
    url: String,
    agent: ureq::Agent,
    next_id: AtomicU64,
}

impl RemotePerceiver {
    /// `endpoint` is `host:port` or a base URL; `/perceive` is appended.
    pub fn new(endpoint: impl AsRef<str>, timeout: Duration) -> Self {
        let base = endpoint.as_ref().trim_end_matches('/');
        let url = if base.contains("://") {
            format!("{base}/perceive")
        } else {
            format!("http://{base}/perceive")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            url,
            agent,
            next_id: AtomicU64::new(0),
        }
    }

    fn call(&self, req: &wire::Request) -> Result<wire::Response, PerceptionError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(req)
            .map_err(|e| PerceptionError::Transport(e.to_string()))?;
        resp.body_mut()
            .read_json::<wire::Response>()
            .map_err(|e| PerceptionError::Malformed(e.to_string()))
    }
}

impl Perceiver for RemotePerceiver {
    fn perceive(&self, obs: &Observation, task: &TaskSpec, memory: &PhaseMemory) -> Result<PerceptionReport> {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request_id = format!("{}-{n}", obs.state_snapshot.step_index);
        let req = wire::Request {
            format: wire::FORMAT,
            request_id: request_id.clone(),
            image: obs.image.pixels.clone(),
            width: obs.image.width,
            height: obs.image.height,
            instruction: task.instruction.clone(),
            phase: memory.phase.as_str().to_string(),
        };
        let resp = self.call(&req)?;
        Ok(wire::decode(&resp, &request_id, obs)?)
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    use super::*;
    use crate::perception::OraclePerceiver;
    use crate::sim::{render, Bounds3, ObjectKind, ObjectState, RenderConfig, TaskKind, Vec3, WorldState};

    fn scene() -> (Observation, TaskSpec) {
        let w = WorldState::new(
            Vec3::new(-0.1, 0.0, 0.05),
            vec![
                ObjectState::new("cup", Vec3::new(0.1, 0.0, 0.03), 0.03, ObjectKind::Graspable, 3),
                ObjectState::new("vase", Vec3::new(0.0, 0.1, 0.05), 0.04, ObjectKind::Obstacle, 4),
            ],
            Bounds3::default(),
        )
        .unwrap();
        let t = TaskSpec::new(TaskKind::Reach, "cup", 0.02, 50).with_interference(&["vase"]);
        (render(&w, &RenderConfig::default()), t)
    }

    /// Serves one request per connection; `reply` maps the request to a body.
    fn serve(reply: impl Fn(wire::Request) -> String + Send + 'static) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let req: wire::Request = serde_json::from_slice(&body).unwrap();
                let out = reply(req);
                write!(
                    stream,
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{out}",
                    out.len()
                )
                .unwrap();
            }
        });
        addr
    }

    #[test]
    fn encode_decode_round_trip() {
        let (obs, t) = scene();
        let report = OraclePerceiver::default().perceive(&obs, &t, &PhaseMemory::default()).unwrap();
        let resp = wire::encode(&report, "r1");
        let json = serde_json::to_string(&resp).unwrap();
        let parsed: wire::Response = serde_json::from_str(&json).unwrap();
        assert_eq!(wire::decode(&parsed, "r1", &obs).unwrap(), report);
    }

    #[test]
    fn decode_rejects_out_of_alphabet_values() {
        let (obs, t) = scene();
        let report = OraclePerceiver::default().perceive(&obs, &t, &PhaseMemory::default()).unwrap();
        let mut resp = wire::encode(&report, "r1");
        resp.switch_weight = 0.25;
        assert!(matches!(wire::decode(&resp, "r1", &obs), Err(PerceptionError::Malformed(_))));
        let mut resp = wire::encode(&report, "r1");
        resp.d_hat = [3, 0, 0];
        assert!(wire::decode(&resp, "r1", &obs).is_err());
        let resp = wire::encode(&report, "r1");
        assert!(wire::decode(&resp, "r2", &obs).is_err());
    }

    #[test]
    fn remote_round_trip_over_http() {
        let (obs, t) = scene();
        let expected = OraclePerceiver::default().perceive(&obs, &t, &PhaseMemory::default()).unwrap();
        let canned = expected.clone();
        let addr = serve(move |req| {
            assert_eq!(req.format, 1);
            assert_eq!(req.image.len(), req.width * req.height);
            serde_json::to_string(&wire::encode(&canned, &req.request_id)).unwrap()
        });
        let remote = RemotePerceiver::new(&addr, Duration::from_secs(5));
        let got = remote.perceive(&obs, &t, &PhaseMemory::default()).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn malformed_body_is_a_perception_error() {
        let (obs, t) = scene();
        let addr = serve(|_| "{\"nope\": 1}".to_string());
        let remote = RemotePerceiver::new(&addr, Duration::from_secs(5));
        let err = remote.perceive(&obs, &t, &PhaseMemory::default()).unwrap_err();
        assert!(matches!(err, crate::Error::Perception(_)), "{err}");
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let (obs, t) = scene();
        let remote = RemotePerceiver::new(&addr, Duration::from_millis(500));
        let err = remote.perceive(&obs, &t, &PhaseMemory::default()).unwrap_err();
        assert!(matches!(err, crate::Error::Perception(PerceptionError::Transport(_))), "{err}");
    }
}
