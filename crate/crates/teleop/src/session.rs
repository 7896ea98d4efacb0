//! The streaming service: one ingest thread feeds the frame buffer and map,
//! an acceptor hands connections to per-client threads, and each client
//! thread drains its own bounded outgoing queue while answering requests.
//!
//! Clients speak the framed protocol either over raw TCP or inside binary
//! WebSocket messages; a connection whose first bytes are `GET ` is upgraded.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use eob_core::buffer::{BufferError, BufferReader, OfferOutcome, PoseBuffer};
use eob_core::geom::{GeomError, Point3Set};
use eob_core::map::{render_map_view, MapBuilder, MapSnapshot};
use eob_core::rov::{builtin_rov_mesh, load_mesh, mount_behind_camera, sample_point_cloud, MeshError, MeshFormat};
use eob_core::sim::{
    PoseSourceEvent, ReplayOptions, ReplaySource, Scene, SimError, SimulatedSource, SimulationConfig,
};
use eob_core::synthesis::{synthesize_exo, SynthesisError};
use image::codecs::jpeg::JpegEncoder;
use image::RgbImage;
use thiserror::Error;
use tungstenite::WebSocket;

use crate::config::{ConfigError, SessionConfig, SourceConfig};
use crate::protocol::{
    encode_map_snapshot, status_message, ConfigHeader, EgoFrameHeader, ExoRequestHeader, ExoResponseHeader,
    FrameDecoder, Message, MessageType, PoseJson, StatusHeader,
};

/// Per-client cap on queued broadcast messages.
pub const CLIENT_QUEUE_CAP: usize = 32;
/// How long a client thread waits for input before servicing its queue.
const POLL_INTERVAL: Duration = Duration::from_millis(2);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);
/// A WebSocket client sends its upgrade request immediately; a connection
/// that stays silent this long is treated as raw TCP.
const PROBE_WINDOW: Duration = Duration::from_millis(250);

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Source(#[from] SimError),
    #[error("robot model: {0}")]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("network: {0}")]
    Io(#[from] io::Error),
    #[error("source images are {got_w}x{got_h} but the intrinsics expect {want_w}x{want_h}")]
    ImageSize {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

/// How a session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    /// The source was exhausted.
    Complete,
    /// Shut down before the source was exhausted.
    Stopped,
    /// The source or buffer reported an error.
    Failed,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Complete => "complete",
            Self::Stopped => "stopped",
            Self::Failed => "failed",
        }
    }
}

/// One source event as seen by the ingest thread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub index: u64,
    pub timestamp: f64,
    /// Buffer sequence number when admitted.
    pub seq: Option<u64>,
    pub evicted: Option<u64>,
    /// Clients connected when the event was broadcast.
    pub clients: usize,
}

impl EventRecord {
    pub const CSV_HEADER: &'static str = "index,timestamp,admitted,seq,evicted,clients";

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<u64>| v.map(|s| s.to_string()).unwrap_or_default();
        format!(
            "{},{:.6},{},{},{},{}",
            self.index,
            self.timestamp,
            u8::from(self.seq.is_some()),
            opt(self.seq),
            opt(self.evicted),
            self.clients
        )
    }
}

#[derive(Debug, Clone)]
pub struct SessionReport {
    pub status: SessionStatus,
    pub error: Option<String>,
    pub events: Vec<EventRecord>,
    pub admitted: usize,
    pub clients_served: usize,
    pub exo_requests: u64,
    pub mean_latency_ms: Option<f64>,
}

impl SessionReport {
    pub fn write_event_log(&self, path: &Path) -> io::Result<()> {
        let mut out = String::from(EventRecord::CSV_HEADER);
        out.push('\n');
        for e in &self.events {
            out.push_str(&e.to_csv_row());
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

/// JPEG-encodes an image.
pub fn encode_jpeg(image: &RgbImage, quality: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.as_raw().len() / 8);
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode_image(image)
        .expect("JPEG encoding into memory does not fail");
    out
}

/// Loads (or builds) the robot model and mounts it behind the camera.
pub fn load_robot_cloud(config: &SessionConfig) -> Result<Point3Set, SessionError> {
    let mesh = match &config.mesh {
        Some(path) => load_mesh(path, MeshFormat::from_path(path)?)?.mesh,
        None => builtin_rov_mesh(),
    };
    let cloud = sample_point_cloud(&mesh, config.points, config.mesh_seed)?;
    Ok(mount_behind_camera(&cloud, config.mount_gap))
}

type EventSource = Box<dyn Iterator<Item = Result<PoseSourceEvent, SimError>> + Send>;

/// Builds the configured source plus its pacing schedule.
fn open_source(config: &SessionConfig) -> Result<(EventSource, Pacing), SessionError> {
    let k = config.intrinsics;
    match &config.source {
        SourceConfig::Simulate(s) => {
            let (trajectory, length) = s.trajectory_kind();
            let source = SimulatedSource::new(SimulationConfig {
                trajectory,
                steps: s.steps,
                scene: Scene::corridor(s.landmarks, -1.0, length + 15.0, s.scene_seed),
                intrinsics: k,
                noise: s.noise,
                render_images: true,
            })?;
            let pacing = if s.rate_hz > 0.0 {
                Pacing::Fixed(Duration::from_secs_f64(1.0 / s.rate_hz))
            } else {
                Pacing::Unpaced
            };
            Ok((Box::new(source), pacing))
        }
        SourceConfig::Replay(r) => {
            let source = ReplaySource::open(&r.trajectory, &r.images, ReplayOptions { tolerance: r.tolerance })?;
            if let Some((_, path)) = source.pairs().first() {
                let (w, h) = image::image_dimensions(path).map_err(|source| SimError::Image {
                    path: path.clone(),
                    source,
                })?;
                if (w, h) != (k.width, k.height) {
                    return Err(SessionError::ImageSize {
                        got_w: w,
                        got_h: h,
                        want_w: k.width,
                        want_h: k.height,
                    });
                }
            }
            let pacing = if r.realtime { Pacing::Timestamps } else { Pacing::Unpaced };
            Ok((Box::new(source), pacing))
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Pacing {
    Unpaced,
    Fixed(Duration),
    Timestamps,
}

// ---------------------------------------------------------------------------
// Client queues
// ---------------------------------------------------------------------------

struct QueueState {
    items: VecDeque<(MessageType, Arc<Vec<u8>>)>,
    closed: bool,
    dropped: u64,
}

/// Outgoing queue of one client. Broadcast traffic beyond the cap evicts the
/// oldest droppable entry; responses are never dropped.
struct ClientQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl ClientQueue {
    fn new() -> Self {
        Self {
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                closed: false,
                dropped: 0,
            }),
            ready: Condvar::new(),
        }
    }

    fn push(&self, kind: MessageType, bytes: Arc<Vec<u8>>) {
        let mut s = self.state.lock().expect("queue lock");
        if kind.is_droppable() && s.items.len() >= CLIENT_QUEUE_CAP {
            match s.items.iter().position(|(k, _)| k.is_droppable()) {
                Some(i) => {
                    s.items.remove(i);
                }
                None => {
                    s.dropped += 1;
                    return;
                }
            }
            s.dropped += 1;
        }
        s.items.push_back((kind, bytes));
        self.ready.notify_one();
    }

    /// Takes everything queued; waits up to `wait` when empty.
    fn drain(&self, wait: Duration) -> (Vec<Arc<Vec<u8>>>, bool) {
        let mut s = self.state.lock().expect("queue lock");
        if s.items.is_empty() && !s.closed && !wait.is_zero() {
            s = self.ready.wait_timeout(s, wait).expect("queue lock").0;
        }
        let items = s.items.drain(..).map(|(_, b)| b).collect();
        (items, s.closed)
    }

    fn close(&self) {
        self.state.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }
}

// ---------------------------------------------------------------------------
// Shared state
// ---------------------------------------------------------------------------

struct Shared {
    config: SessionConfig,
    reader: BufferReader,
    cloud: Point3Set,
    map: Mutex<Arc<MapSnapshot>>,
    clients: Mutex<Vec<Arc<ClientQueue>>>,
    clients_served: AtomicUsize,
    shutdown: AtomicBool,
    complete: AtomicBool,
    exo_requests: AtomicU64,
    latency_sum_ms: Mutex<f64>,
}

impl Shared {
    fn connected(&self) -> usize {
        self.clients.lock().expect("clients lock").len()
    }

    fn broadcast(&self, msg: &Message) {
        let clients = self.clients.lock().expect("clients lock");
        if clients.is_empty() {
            return;
        }
        let bytes = Arc::new(msg.encode());
        for c in clients.iter() {
            c.push(msg.kind, Arc::clone(&bytes));
        }
    }

    /// Registers a negotiated client; late joiners learn that the source
    /// already finished.
    fn register(&self, queue: &Arc<ClientQueue>) {
        let mut clients = self.clients.lock().expect("clients lock");
        if self.complete.load(Ordering::SeqCst) {
            let m = status_message("complete", None);
            queue.push(m.kind, Arc::new(m.encode()));
        }
        clients.push(Arc::clone(queue));
        self.clients_served.fetch_add(1, Ordering::SeqCst);
    }

    /// Marks the source exhausted and tells every registered client, atomically
    /// with respect to [`Shared::register`].
    fn finish(&self, summary: String) {
        let clients = self.clients.lock().expect("clients lock");
        self.complete.store(true, Ordering::SeqCst);
        let m = status_message("complete", Some(summary));
        let bytes = Arc::new(m.encode());
        for c in clients.iter() {
            c.push(m.kind, Arc::clone(&bytes));
        }
    }

    fn config_message(&self) -> Message {
        let c = &self.config;
        let k = &c.intrinsics;
        let header = ConfigHeader {
            capacity: c.buffer.capacity as u64,
            pose_threshold: c.buffer.pose_threshold,
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            lambda1: c.render.lambda1,
            lambda2: c.render.lambda2,
            point_radius: c.render.point_radius,
            transfer_mode: c.transfer_mode_name().into(),
            points: self.cloud.len() as u64,
            jpeg_quality: c.jpeg_quality,
        };
        Message::new(MessageType::Config, &header, Vec::new())
    }

    fn record_latency(&self, ms: f64) -> f64 {
        let mut sum = self.latency_sum_ms.lock().expect("latency lock");
        *sum += ms;
        let n = self.exo_requests.fetch_add(1, Ordering::SeqCst) + 1;
        *sum / n as f64
    }

    fn mean_latency(&self) -> Option<f64> {
        let n = self.exo_requests.load(Ordering::SeqCst);
        (n > 0).then(|| *self.latency_sum_ms.lock().expect("latency lock") / n as f64)
    }

    /// Answers an EXO_REQUEST with EXO_RESPONSE or STATUS.
    fn handle_exo_request(&self, req: &ExoRequestHeader) -> Message {
        let status = |state: &str, message: String| {
            let h = StatusHeader {
                state: state.into(),
                message: Some(message),
                request_id: req.request_id,
            };
            Message::new(MessageType::Status, &h, Vec::new())
        };
        if req.f < 1 {
            return status("error", format!("EOB distance f must be at least 1, got {}", req.f));
        }
        let map_pose = match req.map_view.as_ref().map(PoseJson::to_pose).transpose() {
            Ok(p) => p,
            Err(e) => return status("error", format!("invalid map_view pose: {e}")),
        };
        let snapshot = self.reader.snapshot();
        let start = Instant::now();
        let view = match synthesize_exo(&snapshot, req.f as usize, &self.cloud, &self.config.intrinsics, &self.config.render) {
            Ok(v) => v,
            Err(SynthesisError::NotEnoughFrames(n)) => {
                return status("warming_up", format!("buffer holds {n} frame(s); need at least 2"))
            }
            Err(e) => return status("error", e.to_string()),
        };
        let mut payload = encode_jpeg(&view.image, self.config.jpeg_quality);
        let exo_len = payload.len() as u64;
        if let Some(pose) = map_pose {
            let map = Arc::clone(&self.map.lock().expect("map lock"));
            let img = render_map_view(&map, &pose, &self.config.intrinsics);
            payload.extend_from_slice(&encode_jpeg(&img, self.config.jpeg_quality));
        }
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        let mean_latency_ms = self.record_latency(latency_ms);
        let header = ExoResponseHeader {
            f: req.f as u64,
            clamped: view.clamped,
            reference_seq: view.reference_seq,
            current_seq: view.current_seq,
            latency_ms,
            mean_latency_ms,
            overlay_pixels: view.overlay_pixel_count as u64,
            width: view.image.width(),
            height: view.image.height(),
            exo_len,
            map_view_len: payload.len() as u64 - exo_len,
            request_id: req.request_id,
        };
        Message::new(MessageType::ExoResponse, &header, payload)
    }
}

// ---------------------------------------------------------------------------
// Session handle
// ---------------------------------------------------------------------------

/// A running session.
pub struct SessionHandle {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    ingest: JoinHandle<(SessionStatus, Option<String>, Vec<EventRecord>)>,
    acceptor: JoinHandle<()>,
}

impl SessionHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Asks every thread to stop; [`SessionHandle::wait`] still returns the
    /// report.
    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
    }

    /// True once the source has been exhausted.
    pub fn is_complete(&self) -> bool {
        self.shared.complete.load(Ordering::SeqCst)
    }

    pub fn wait(self) -> SessionReport {
        let (status, error, events) = self.ingest.join().expect("ingest thread panicked");
        let _ = self.acceptor.join();
        SessionReport {
            status,
            error,
            admitted: events.iter().filter(|e| e.seq.is_some()).count(),
            events,
            clients_served: self.shared.clients_served.load(Ordering::SeqCst),
            exo_requests: self.shared.exo_requests.load(Ordering::SeqCst),
            mean_latency_ms: self.shared.mean_latency(),
        }
    }
}

/// Validates the configuration, binds `config.listen` and starts serving.
pub fn start(config: SessionConfig) -> Result<SessionHandle, SessionError> {
    config.validate()?;
    let listener = TcpListener::bind(&config.listen)?;
    start_with_listener(config, listener)
}

/// Starts serving on an already bound listener (its address overrides
/// `config.listen`).
pub fn start_with_listener(config: SessionConfig, listener: TcpListener) -> Result<SessionHandle, SessionError> {
    let local_addr = listener.local_addr()?;
    let mut config = config;
    config.listen = local_addr.to_string();
    if local_addr.port() == 0 {
        return Err(ConfigError::Invalid("listener has no port".into()).into());
    }
    config.validate()?;
    let cloud = load_robot_cloud(&config)?;
    let (source, pacing) = open_source(&config)?;
    let buffer = PoseBuffer::new(config.buffer, config.intrinsics.width, config.intrinsics.height)?;
    let shared = Arc::new(Shared {
        reader: buffer.reader(),
        cloud,
        map: Mutex::new(Arc::new(MapSnapshot::default())),
        clients: Mutex::new(Vec::new()),
        clients_served: AtomicUsize::new(0),
        shutdown: AtomicBool::new(false),
        complete: AtomicBool::new(false),
        exo_requests: AtomicU64::new(0),
        latency_sum_ms: Mutex::new(0.0),
        config,
    });
    listener.set_nonblocking(true)?;
    let acceptor = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("eob-accept".into())
            .spawn(move || accept_loop(listener, shared))?
    };
    let ingest = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("eob-ingest".into())
            .spawn(move || ingest_loop(shared, buffer, source, pacing))?
    };
    Ok(SessionHandle {
        shared,
        local_addr,
        ingest,
        acceptor,
    })
}

/// Runs a session to completion.
pub fn run_session(config: SessionConfig) -> Result<SessionReport, SessionError> {
    Ok(start(config)?.wait())
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

fn ingest_loop(
    shared: Arc<Shared>,
    mut buffer: PoseBuffer,
    source: EventSource,
    pacing: Pacing,
) -> (SessionStatus, Option<String>, Vec<EventRecord>) {
    let cfg = &shared.config;
    while shared.connected() < cfg.wait_for_clients && !shared.shutdown.load(Ordering::SeqCst) {
        thread::sleep(Duration::from_millis(5));
    }
    let mut map = MapBuilder::new(cfg.map_history);
    let mut events = Vec::new();
    let mut status = SessionStatus::Complete;
    let mut error = None;
    let start = Instant::now();
    let mut first_ts = None;
    for (index, event) in source.enumerate() {
        if shared.shutdown.load(Ordering::SeqCst) {
            status = SessionStatus::Stopped;
            break;
        }
        let event = match event {
            Ok(e) => e,
            Err(e) => {
                status = SessionStatus::Failed;
                error = Some(e.to_string());
                break;
            }
        };
        let ts = event.pose.timestamp();
        let due = match pacing {
            Pacing::Unpaced => None,
            Pacing::Fixed(period) => Some(period * index as u32),
            Pacing::Timestamps => Some(Duration::from_secs_f64((ts - *first_ts.get_or_insert(ts)).max(0.0))),
        };
        if let Some(wait) = due.and_then(|d| d.checked_sub(start.elapsed())) {
            thread::sleep(wait);
        }
        let (seq, evicted) = match buffer.offer(event.pose, Arc::clone(&event.image)) {
            Ok(OfferOutcome::Admitted { seq, evicted }) => (Some(seq), evicted),
            Ok(OfferOutcome::RejectedStatic) => (None, None),
            Err(e) => {
                status = SessionStatus::Failed;
                error = Some(e.to_string());
                break;
            }
        };
        let clients = shared.connected();
        if seq.is_some() {
            let newest = buffer.snapshot().current().cloned().expect("just admitted");
            match map.update(&newest, event.map_points.as_deref(), &shared.cloud, &cfg.render) {
                Ok(snap) => {
                    let snap = Arc::new(snap);
                    *shared.map.lock().expect("map lock") = Arc::clone(&snap);
                    if clients > 0 {
                        shared.broadcast(&encode_map_snapshot(&snap));
                    }
                }
                Err(e) => {
                    status = SessionStatus::Failed;
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        if clients > 0 {
            let header = EgoFrameHeader {
                frame_index: index as u64,
                seq,
                pose: PoseJson::from(&event.pose),
                width: event.image.width(),
                height: event.image.height(),
            };
            let jpeg = encode_jpeg(&event.image, cfg.jpeg_quality);
            shared.broadcast(&Message::new(MessageType::EgoFrame, &header, jpeg));
        }
        events.push(EventRecord {
            index: index as u64,
            timestamp: ts,
            seq,
            evicted,
            clients,
        });
    }
    if status == SessionStatus::Complete {
        shared.finish(format!("source exhausted after {} events", events.len()));
        let linger_start = Instant::now();
        while linger_start.elapsed() < cfg.linger && !shared.shutdown.load(Ordering::SeqCst) {
            thread::sleep(Duration::from_millis(5));
        }
    } else if let Some(e) = &error {
        shared.broadcast(&status_message("error", Some(e.clone())));
    }
    shared.shutdown.store(true, Ordering::SeqCst);
    (status, error, events)
}

// ---------------------------------------------------------------------------
// Connections
// ---------------------------------------------------------------------------

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut workers = Vec::new();
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = Arc::clone(&shared);
                let queue = Arc::new(ClientQueue::new());
                let spawned = thread::Builder::new()
                    .name("eob-client".into())
                    .spawn(move || {
                        let _ = serve_client(stream, &shared, &queue);
                        shared
                            .clients
                            .lock()
                            .expect("clients lock")
                            .retain(|c| !Arc::ptr_eq(c, &queue));
                    });
                if let Ok(h) = spawned {
                    workers.push(h);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
        workers.retain(|h: &JoinHandle<()>| !h.is_finished());
    }
    for h in workers {
        let _ = h.join();
    }
}

enum Transport {
    Tcp(TcpStream),
    Ws(Box<WebSocket<TcpStream>>),
}

enum Received {
    Idle,
    Data,
    Closed,
    /// A WebSocket text frame or other non-binary payload.
    Invalid(String),
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

impl Transport {
    /// Detects a WebSocket upgrade from the first bytes and performs it.
    fn negotiate(stream: TcpStream) -> io::Result<Self> {
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        let mut probe = [0u8; 4];
        stream.set_read_timeout(Some(PROBE_WINDOW))?;
        let deadline = Instant::now() + PROBE_WINDOW;
        let is_ws = loop {
            match stream.peek(&mut probe) {
                Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(4) => break &probe == b"GET ",
                Ok(n) if probe[..n] != b"GET "[..n] => break false,
                Ok(_) if Instant::now() > deadline => break false,
                Ok(_) => thread::sleep(Duration::from_millis(1)),
                Err(e) if is_timeout(&e) => break false,
                Err(e) => return Err(e),
            }
        };
        stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
        let transport = if is_ws {
            let ws = tungstenite::accept(stream)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
            ws.get_ref().set_read_timeout(Some(POLL_INTERVAL))?;
            Transport::Ws(Box::new(ws))
        } else {
            stream.set_read_timeout(Some(POLL_INTERVAL))?;
            Transport::Tcp(stream)
        };
        Ok(transport)
    }

    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self {
            Transport::Tcp(s) => s.write_all(bytes),
            Transport::Ws(ws) => ws
                .send(tungstenite::Message::binary(bytes.to_vec()))
                .map_err(|e| io::Error::new(io::ErrorKind::BrokenPipe, e.to_string())),
        }
    }

    fn recv(&mut self, decoder: &mut FrameDecoder) -> Received {
        match self {
            Transport::Tcp(s) => {
                let mut buf = [0u8; 16 * 1024];
                match s.read(&mut buf) {
                    Ok(0) => Received::Closed,
                    Ok(n) => {
                        decoder.push(&buf[..n]);
                        Received::Data
                    }
                    Err(e) if is_timeout(&e) || e.kind() == io::ErrorKind::Interrupted => Received::Idle,
                    Err(_) => Received::Closed,
                }
            }
            Transport::Ws(ws) => match ws.read() {
                Ok(tungstenite::Message::Binary(b)) => {
                    decoder.push(&b);
                    Received::Data
                }
                Ok(tungstenite::Message::Text(_)) => Received::Invalid("text WebSocket messages are not accepted".into()),
                Ok(tungstenite::Message::Close(_)) => Received::Closed,
                Ok(_) => Received::Idle,
                Err(tungstenite::Error::Io(e)) if is_timeout(&e) => Received::Idle,
                Err(_) => Received::Closed,
            },
        }
    }

    fn close(&mut self) {
        match self {
            Transport::Tcp(s) => {
                let _ = s.flush();
                let _ = s.shutdown(Shutdown::Write);
            }
            Transport::Ws(ws) => {
                let _ = ws.close(None);
                let _ = ws.flush();
                // Give the peer a moment to acknowledge the close frame.
                let deadline = Instant::now() + Duration::from_millis(200);
                while Instant::now() < deadline {
                    match ws.read() {
                        Ok(_) => {}
                        Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {}
                        Err(_) => break,
                    }
                }
            }
        }
    }
}

fn serve_client(stream: TcpStream, shared: &Shared, queue: &Arc<ClientQueue>) -> io::Result<()> {
    let mut transport = Transport::negotiate(stream)?;
    transport.send(&shared.config_message().encode())?;
    shared.register(queue);
    let mut decoder = FrameDecoder::new();
    loop {
        if shared.shutdown.load(Ordering::SeqCst) {
            queue.close();
        }
        let (items, closed) = queue.drain(Duration::ZERO);
        for bytes in &items {
            transport.send(bytes)?;
        }
        if closed {
            // Flush whatever arrived between the drain and the close.
            for bytes in queue.drain(Duration::ZERO).0 {
                transport.send(&bytes)?;
            }
            transport.close();
            return Ok(());
        }
        match transport.recv(&mut decoder) {
            Received::Idle => continue,
            Received::Closed => return Ok(()),
            Received::Invalid(reason) => {
                transport.send(&status_message("error", Some(reason)).encode())?;
                transport.close();
                return Ok(());
            }
            Received::Data => {}
        }
        loop {
            match decoder.next_message() {
                Ok(Some(msg)) => {
                    if let Some(reply) = handle_client_message(shared, &msg) {
                        queue.push(reply.kind, Arc::new(reply.encode()));
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    for bytes in queue.drain(Duration::ZERO).0 {
                        transport.send(&bytes)?;
                    }
                    transport.send(&status_message("error", Some(format!("malformed frame: {e}"))).encode())?;
                    transport.close();
                    return Ok(());
                }
            }
        }
    }
}

fn handle_client_message(shared: &Shared, msg: &Message) -> Option<Message> {
    match msg.kind {
        MessageType::ExoRequest => Some(match msg.header::<ExoRequestHeader>() {
            Ok(req) => shared.handle_exo_request(&req),
            Err(e) => status_message("error", Some(format!("invalid EXO_REQUEST header: {e}"))),
        }),
        MessageType::Config => Some(shared.config_message()),
        // Client status messages are informational.
        MessageType::Status => None,
        other => Some(status_message(
            "error",
            Some(format!("clients may not send {other:?} messages")),
        )),
    }
}
