use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::config::{Config, ServerSection};
use super::wire::{self, Ack, ClientMessage, ErrorReply, FrameError, ServerMessage};
use super::ServiceError;
use crate::motion::{synth, SkeletonSpec};
use crate::planner::{MotionLibrary, Planner};
use crate::runtime::{steering, Bus, CommandMsg, LiveClock, LiveRuntime, PlantConfig, Simulation, TaskStats, seconds};

/// Walk, run and stand styles built from synthetic clips, plus a squat
/// skill on the desk skeleton.
pub fn demo_library(skeleton: &Arc<SkeletonSpec>) -> MotionLibrary {
    let mut lib = MotionLibrary::default();
    lib.add_style("walk", synth::wave(skeleton.clone(), 6.0, 1.0, 0.3));
    lib.add_style("walk", synth::wave(skeleton.clone(), 6.0, 0.5, 0.2));
    lib.add_style("run", synth::wave(skeleton.clone(), 6.0, 3.0, 0.4));
    lib.add_style("stand", synth::idle(skeleton.clone(), 4.0));
    if skeleton.name == SkeletonSpec::desk_7dof().name {
        lib.add_skill("squat", &synth::desk_squat(skeleton.clone(), 4.0, 1.0), 5);
    }
    lib
}

/// Steering simulation for `cfg`: retrieval planner over the configured
/// library, kinematic follower, standing start.
pub fn steering_sim(cfg: &Config, seed: u64) -> Result<Simulation, ServiceError> {
    let skeleton = cfg.load_skeleton()?;
    let library = match cfg.library_dir() {
        Some(dir) => MotionLibrary::load(dir)?.0,
        None => demo_library(&skeleton),
    };
    let planner = Planner::with_retrieval(cfg.planner.params.clone(), skeleton.clone(), library, seed)?;
    let start = synth::idle(skeleton, 0.1).frames[0].clone();
    Ok(steering(cfg.runtime.sim_config()?, planner, &start, PlantConfig::default(), seed)?)
}

type Outbound = Arc<[u8]>;

struct ClientSlot {
    id: u64,
    tx: SyncSender<Outbound>,
    stream: TcpStream,
}

struct Shared {
    bus: Arc<Bus>,
    clock: LiveClock,
    settings: ServerSection,
    upper_body_joints: usize,
    stop: AtomicBool,
    clients: Mutex<Vec<ClientSlot>>,
    publish: Mutex<()>,
    last_received: AtomicU64,
    dropped: AtomicU64,
    next_id: AtomicU64,
    client_threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Shared {
    /// Queue `bytes` for every client without blocking; full queues drop
    /// the message, closed ones are removed.
    fn broadcast(&self, bytes: &Outbound) {
        let mut clients = self.clients.lock().unwrap_or_else(|e| e.into_inner());
        clients.retain(|c| match c.tx.try_send(bytes.clone()) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                self.dropped.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(TrySendError::Disconnected(_)) => {
                debug!("client {} gone", c.id);
                false
            }
        });
    }

    fn state_message(&self) -> Option<Outbound> {
        let snap = self.bus.state.read()?;
        let plan = self.bus.plan.read().map(|p| {
            wire::plan_info(&p.value.segment, p.seq, p.tick, p.value.cmd_seq, p.value.client_seq, self.settings.preview_frames)
        });
        let update = wire::state_update(
            &snap.value,
            plan,
            self.last_received.load(Ordering::Acquire),
            self.bus.deadline_misses.load(Ordering::Relaxed),
        );
        Some(wire::encode(&ServerMessage::State(update)).into())
    }

    fn handle(&self, body: &[u8]) -> ServerMessage {
        let steer = match wire::decode::<ClientMessage>(body) {
            Ok(ClientMessage::Steer(s)) => s,
            Err(e) => return ServerMessage::Error(ErrorReply { seq: wire::sniff_seq(body), message: e.to_string() }),
        };
        let (applied, clamped) = match steer.to_plan_command() {
            Ok(c) => c,
            Err(message) => return ServerMessage::Error(ErrorReply { seq: Some(steer.seq), message }),
        };
        if let crate::planner::PlanCommand::Layer { upper_body, .. } = &applied {
            if upper_body.len() != self.upper_body_joints {
                let message = format!("upper_body has {} values, skeleton has {} upper-body joints", upper_body.len(), self.upper_body_joints);
                return ServerMessage::Error(ErrorReply { seq: Some(steer.seq), message });
            }
        }
        let (cmd_seq, tick) = {
            // one writer at a time keeps the mailbox sequence in publish order
            let _g = self.publish.lock().unwrap_or_else(|e| e.into_inner());
            let tick = self.clock.tick();
            let seq = self.bus.external.publish(CommandMsg { command: applied.clone(), client_seq: steer.seq }, tick);
            self.last_received.fetch_max(steer.seq, Ordering::AcqRel);
            (seq, tick)
        };
        let warning = clamped.then(|| "command clamped into its envelope".to_string());
        ServerMessage::Ack(Ack { seq: steer.seq, cmd_seq, applied, clamped, warning, virtual_time: seconds(tick) })
    }
}

/// Steering service: a live runtime plus a TCP front end. Every client
/// gets a reader and a writer thread; the runtime only ever sees the
/// command mailbox, and the broadcaster only reads snapshots.
pub struct Server {
    runtime: LiveRuntime,
    shared: Arc<Shared>,
    addr: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl Server {
    pub fn start(cfg: &Config, sim: Simulation) -> Result<Self, ServiceError> {
        let addr = cfg
            .server
            .bind
            .to_socket_addrs()
            .map_err(|e| ServiceError::Config(format!("bind {}: {e}", cfg.server.bind)))?
            .next()
            .ok_or_else(|| ServiceError::Config(format!("bind {} resolves to nothing", cfg.server.bind)))?;
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let upper_body_joints = cfg.load_skeleton()?.upper_body_joints().len();
        let runtime = LiveRuntime::start(sim);
        let shared = Arc::new(Shared {
            bus: runtime.bus().clone(),
            clock: runtime.clock(),
            settings: cfg.server.clone(),
            upper_body_joints,
            stop: AtomicBool::new(false),
            clients: Mutex::new(Vec::new()),
            publish: Mutex::new(()),
            last_received: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            next_id: AtomicU64::new(0),
            client_threads: Mutex::new(Vec::new()),
        });
        let s = shared.clone();
        let accept = std::thread::spawn(move || accept_loop(listener, s));
        let s = shared.clone();
        let broadcaster = std::thread::spawn(move || broadcast_loop(s));
        info!("serving on {addr}");
        Ok(Self { runtime, shared, addr, threads: vec![accept, broadcaster] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn bus(&self) -> &Arc<Bus> {
        self.runtime.bus()
    }

    pub fn clock(&self) -> LiveClock {
        self.runtime.clock()
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// State updates not queued because a client's queue was full.
    pub fn dropped_updates(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    pub fn stop(mut self) -> Vec<TaskStats> {
        self.shared.stop.store(true, Ordering::Release);
        for h in self.threads.drain(..) {
            let _ = h.join();
        }
        let clients = std::mem::take(&mut *self.shared.clients.lock().unwrap_or_else(|e| e.into_inner()));
        for c in &clients {
            let _ = c.stream.shutdown(Shutdown::Both);
        }
        drop(clients);
        let handles = std::mem::take(&mut *self.shared.client_threads.lock().unwrap_or_else(|e| e.into_inner()));
        for h in handles {
            let _ = h.join();
        }
        self.runtime.stop()
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if let Err(e) = add_client(&shared, stream) {
                    warn!("client {peer} setup failed: {e}");
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn add_client(shared: &Arc<Shared>, stream: TcpStream) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let (tx, rx) = sync_channel::<Outbound>(shared.settings.client_queue);
    let write_half = stream.try_clone()?;
    let read_half = stream.try_clone()?;
    let writer = std::thread::spawn(move || write_loop(write_half, rx));
    let s = shared.clone();
    let reply = tx.clone();
    let reader = std::thread::spawn(move || read_loop(read_half, reply, s, id));
    shared.clients.lock().unwrap_or_else(|e| e.into_inner()).push(ClientSlot { id, tx, stream });
    shared.client_threads.lock().unwrap_or_else(|e| e.into_inner()).extend([writer, reader]);
    debug!("client {id} connected");
    Ok(())
}

fn write_loop(stream: TcpStream, rx: Receiver<Outbound>) {
    let mut w = BufWriter::new(stream);
    while let Ok(bytes) = rx.recv() {
        if w.write_all(&bytes).and_then(|_| w.flush()).is_err() {
            break;
        }
    }
}

fn read_loop(stream: TcpStream, reply: SyncSender<Outbound>, shared: Arc<Shared>, id: u64) {
    let max = shared.settings.max_message_bytes;
    let mut r = BufReader::new(stream);
    loop {
        let msg = match wire::read_frame(&mut r, max) {
            Ok(body) => shared.handle(&body),
            Err(e @ FrameError::TooLarge(..)) => ServerMessage::Error(ErrorReply { seq: None, message: e.to_string() }),
            Err(_) => break,
        };
        if reply.send(wire::encode(&msg).into()).is_err() {
            break;
        }
    }
    let _ = r.get_ref().shutdown(Shutdown::Both);
    debug!("client {id} disconnected");
}

fn broadcast_loop(shared: Arc<Shared>) {
    let period = Duration::from_secs_f64(1.0 / shared.settings.broadcast_hz);
    let mut next = Instant::now();
    while !shared.stop.load(Ordering::Acquire) {
        if let Some(bytes) = shared.state_message() {
            shared.broadcast(&bytes);
        }
        next += period;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}

/// Bind, run until `stop` is set, then shut down.
pub fn serve(cfg: &Config, seed: u64, stop: &AtomicBool) -> Result<Vec<TaskStats>, ServiceError> {
    let server = Server::start(cfg, steering_sim(cfg, seed)?)?;
    while !stop.load(Ordering::Acquire) {
        std::thread::sleep(Duration::from_millis(50));
    }
    Ok(server.stop())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shared(queue: usize) -> (Arc<Shared>, Vec<Receiver<Outbound>>, TcpListener) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let rt = LiveRuntime::start(steering_sim(&Config::profile(super::super::Profile::Desk), 0).unwrap());
        let s = Shared {
            bus: rt.bus().clone(),
            clock: rt.clock(),
            settings: ServerSection { client_queue: queue, ..ServerSection::default() },
            upper_body_joints: 0,
            stop: AtomicBool::new(false),
            clients: Mutex::new(Vec::new()),
            publish: Mutex::new(()),
            last_received: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            next_id: AtomicU64::new(0),
            client_threads: Mutex::new(Vec::new()),
        };
        rt.stop();
        let mut rxs = Vec::new();
        for id in 0..3 {
            let (tx, rx) = sync_channel(queue);
            let stream = TcpStream::connect(listener.local_addr().unwrap()).unwrap();
            s.clients.lock().unwrap().push(ClientSlot { id, tx, stream });
            rxs.push(rx);
        }
        (Arc::new(s), rxs, listener)
    }

    #[test]
    fn broadcast_never_waits_for_a_full_queue() {
        let (s, mut rxs, _l) = shared(2);
        let bytes: Outbound = vec![1u8, 2, 3].into();
        let t = Instant::now();
        for _ in 0..1000 {
            s.broadcast(&bytes);
            // client 0 keeps up, client 1 never reads
            while rxs[0].try_recv().is_ok() {}
        }
        assert!(t.elapsed() < Duration::from_secs(1));
        assert_eq!(s.dropped.load(Ordering::Relaxed), 2 * 998);
        drop(rxs.remove(2));
        s.broadcast(&bytes);
        assert_eq!(s.clients.lock().unwrap().len(), 2);
    }
}
