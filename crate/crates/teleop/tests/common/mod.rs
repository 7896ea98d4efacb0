#![allow(dead_code)]

use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::time::{Duration, Instant};

use eob_teleop::config::{SessionConfig, SimulateSource, SourceConfig};
use eob_teleop::protocol::{read_message, ExoRequestHeader, Message, StatusHeader, MessageType, ProtocolError};
use eob_teleop::session::{start_with_listener, SessionHandle};

/// Simulated, unpaced session with a small robot cloud.
pub fn sim_config(steps: usize) -> SessionConfig {
    SessionConfig {
        source: SourceConfig::Simulate(SimulateSource {
            steps,
            rate_hz: 0.0,
            ..SimulateSource::default()
        }),
        points: 2000,
        ..SessionConfig::default()
    }
}

pub fn start(config: SessionConfig) -> SessionHandle {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    start_with_listener(config, listener).unwrap()
}

pub fn wait_complete(handle: &SessionHandle) {
    let deadline = Instant::now() + Duration::from_secs(120);
    while !handle.is_complete() {
        assert!(Instant::now() < deadline, "session did not complete");
        std::thread::sleep(Duration::from_millis(10));
    }
}

pub struct Client {
    pub stream: TcpStream,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
        stream.set_nodelay(true).unwrap();
        Self { stream }
    }

    pub fn send(&mut self, msg: &Message) {
        self.stream.write_all(&msg.encode()).unwrap();
    }

    pub fn send_raw(&mut self, bytes: &[u8]) {
        self.stream.write_all(bytes).unwrap();
    }

    pub fn recv(&mut self) -> Result<Option<Message>, ProtocolError> {
        read_message(&mut self.stream)
    }

    /// Next message of one of `kinds`, skipping broadcast traffic.
    pub fn recv_kind(&mut self, kinds: &[MessageType]) -> Message {
        loop {
            let m = self.recv().unwrap().expect("connection closed");
            if kinds.contains(&m.kind) {
                return m;
            }
        }
    }

    pub fn request(&mut self, f: i64) -> Message {
        let req = ExoRequestHeader {
            f,
            map_view: None,
            request_id: None,
        };
        self.send(&Message::new(MessageType::ExoRequest, &req, Vec::new()));
        self.reply()
    }

    /// Next EXO_RESPONSE or request-related STATUS (skips `complete`).
    pub fn reply(&mut self) -> Message {
        loop {
            let m = self.recv_kind(&[MessageType::ExoResponse, MessageType::Status]);
            if m.kind == MessageType::Status && m.header::<StatusHeader>().unwrap().state == "complete" {
                continue;
            }
            return m;
        }
    }
}
