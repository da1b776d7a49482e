mod common;

use std::io::Write;
use std::net::TcpStream;
use std::path::Path;
use std::time::{Duration, Instant};

use common::desk;
use humtrack::motion::io::save_clip;
use humtrack::motion::{synth, SkeletonSpec};
use humtrack::planner::spring::velocity_from_direction;
use humtrack::planner::{spring_targets, EntryKind, PlanCommand, SpringParams};
use humtrack::runtime::{seconds, CommandMsg, TaskId};
use humtrack::service::wire::{self, read_message};
use humtrack::service::{
    ingest_dataset, reference_mismatches, steering_sim, write_manifest, Ack, ClientMessage, Config, IngestOptions, Profile, Server, ServerMessage,
    StateUpdate, SteerCommand, SteerMode,
};
use proptest::prelude::*;

fn test_config() -> Config {
    let mut cfg = Config::profile(Profile::Desk);
    cfg.server.bind = "127.0.0.1:0".into();
    cfg.server.broadcast_hz = 30.0;
    cfg
}

fn start() -> (Server, Config) {
    let cfg = test_config();
    let server = Server::start(&cfg, steering_sim(&cfg, 7).unwrap()).unwrap();
    (server, cfg)
}

struct Client {
    stream: TcpStream,
}

impl Client {
    fn connect(server: &Server) -> Self {
        let stream = TcpStream::connect(server.local_addr()).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        Self { stream }
    }

    fn send(&mut self, steer: SteerCommand) {
        wire::write_message(&mut self.stream, &ClientMessage::Steer(steer)).unwrap();
    }

    fn send_raw(&mut self, body: &[u8]) {
        self.stream.write_all(&(body.len() as u32).to_be_bytes()).unwrap();
        self.stream.write_all(body).unwrap();
    }

    fn next(&mut self) -> ServerMessage {
        read_message(&mut self.stream, 1 << 22).unwrap()
    }

    /// Skip state updates until a non-state reply arrives.
    fn reply(&mut self) -> ServerMessage {
        loop {
            match self.next() {
                ServerMessage::State(_) => continue,
                m => return m,
            }
        }
    }

    fn ack(&mut self) -> Ack {
        match self.reply() {
            ServerMessage::Ack(a) => a,
            m => panic!("expected ack, got {m:?}"),
        }
    }

    fn state(&mut self) -> StateUpdate {
        loop {
            if let ServerMessage::State(s) = self.next() {
                return s;
            }
        }
    }
}

#[test]
fn paper_profile_self_test() {
    let cfg = Config::load(None, Some(Profile::Paper)).unwrap();
    assert_eq!(reference_mismatches(&cfg), Vec::<String>::new());
    let mut changed = cfg.clone();
    changed.dr.push_duration.hi = 4.0;
    changed.reward.scales.ang = 3.0;
    assert_eq!(reference_mismatches(&changed).len(), 2);
}

#[test]
fn example_config_and_skeleton_files_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config");
    for (file, builtin) in [("desk_7dof.json", SkeletonSpec::desk_7dof()), ("g1_29dof.json", SkeletonSpec::g1_29dof())] {
        assert_eq!(SkeletonSpec::load(root.join("skeletons").join(file)).unwrap(), builtin, "{file}");
    }
    for file in ["desk.toml", "paper.toml"] {
        let cfg = Config::load(Some(&root.join(file)), None).unwrap();
        assert!(cfg.load_skeleton().is_ok(), "{file}");
    }
    let paper = Config::load(Some(&root.join("paper.toml")), None).unwrap();
    assert_eq!(paper.profile, Profile::Paper);
    assert_eq!(reference_mismatches(&paper), Vec::<String>::new());
}

#[test]
fn referenced_files_must_exist() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "skeleton = \"skeletons/nowhere.json\"\n").unwrap();
    assert!(Config::load(Some(&path), None).is_err());
    std::fs::create_dir(dir.path().join("skeletons")).unwrap();
    std::fs::write(dir.path().join("skeletons/nowhere.json"), SkeletonSpec::desk_7dof().to_json()).unwrap();
    let cfg = Config::load(Some(&path), None).unwrap();
    assert_eq!(cfg.load_skeleton().unwrap().joint_count(), 7);
}

#[test]
fn bind_address_comes_from_the_environment() {
    std::env::set_var(humtrack::service::BIND_ENV, "0.0.0.0:9999");
    let cfg = Config::load(None, None);
    std::env::remove_var(humtrack::service::BIND_ENV);
    assert_eq!(cfg.unwrap().server.bind, "0.0.0.0:9999");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn steer_messages_survive_the_wire(
        seq in any::<u64>(),
        t in -1e6f64..1e6,
        v in -100.0f64..100.0,
        d in -720.0f64..720.0,
        h in -1.0f64..2.0,
        mode in 0usize..7,
        upper in proptest::option::of(proptest::collection::vec(-3.0f64..3.0, 0..6)),
    ) {
        let modes = [SteerMode::Walk, SteerMode::Run, SteerMode::Crawl, SteerMode::Squat, SteerMode::Kneel, SteerMode::Box, SteerMode::Layer];
        let steer = SteerCommand { seq, client_time: t, mode: modes[mode], velocity: v, direction_deg: d, style: Some("walk".into()), height: h, upper_body: upper };
        let msg = ClientMessage::Steer(steer);
        let bytes = wire::encode(&msg);
        let back: ClientMessage = read_message(&mut std::io::Cursor::new(bytes), 1 << 20).unwrap();
        prop_assert_eq!(back, msg);
    }
}

#[test]
fn command_reaches_a_broadcast_plan_within_two_planner_periods() {
    let (server, cfg) = start();
    let mut c = Client::connect(&server);
    // let the follower record enough history for a plan context
    std::thread::sleep(Duration::from_millis(200));
    c.send(SteerCommand::navigate(1, 1.0, 0.0));
    let ack = c.ack();
    assert_eq!((ack.seq, ack.clamped), (1, false));
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut last_time = f64::NEG_INFINITY;
    let mut last_applied = 0;
    let update = loop {
        assert!(Instant::now() < deadline, "no plan for the command");
        let s = c.state();
        assert!(s.virtual_time >= last_time);
        assert!(s.last_applied_seq >= last_applied);
        assert!(s.last_received_seq >= ack.seq);
        last_time = s.virtual_time;
        last_applied = s.last_applied_seq;
        if s.plan.as_ref().is_some_and(|p| p.client_seq == 1) {
            break s;
        }
    };
    let period = seconds(3000 / cfg.runtime.planner_hz);
    let plan = update.plan.unwrap();
    assert!(plan.published - ack.virtual_time <= 2.0 * period, "plan after {} s", plan.published - ack.virtual_time);
    assert!(update.virtual_time - ack.virtual_time <= 2.0 * period + 1.5 / cfg.server.broadcast_hz, "update after {} s", update.virtual_time - ack.virtual_time);
    let expected = spring_targets(&plan.anchor, velocity_from_direction(1.0, 0.0), 0.0, &SpringParams::default(), cfg.planner.params.horizon);
    assert_eq!(plan.target, expected);
    assert!(plan.preview.len() <= 25 && plan.preview.len() >= 2);
    let stats = server.stop();
    assert!(stats.iter().all(|s| s.aborted.is_none()));
}

#[test]
fn out_of_envelope_velocity_is_clamped_with_warning() {
    let (server, _) = start();
    let mut c = Client::connect(&server);
    c.send(SteerCommand::navigate(5, 9.0, 90.0));
    let ack = c.ack();
    assert!(ack.clamped);
    assert!(ack.warning.is_some());
    assert_eq!(ack.applied, PlanCommand::Navigate { velocity: 6.0, direction_deg: 90.0, style: "walk".into() });
    c.send(SteerCommand::navigate(6, 6.0, 90.0));
    let ack = c.ack();
    assert!(!ack.clamped && ack.warning.is_none());
    server.stop();
}

#[test]
fn malformed_messages_get_an_error_and_keep_the_connection() {
    let (server, _) = start();
    let mut c = Client::connect(&server);
    c.send_raw(b"{not json");
    assert!(matches!(c.reply(), ServerMessage::Error(e) if e.seq.is_none()));
    c.send_raw(br#"{"type":"steer","seq":9,"mode":"fly"}"#);
    assert!(matches!(c.reply(), ServerMessage::Error(e) if e.seq == Some(9)));
    c.send_raw(br#"{"type":"steer","seq":10,"mode":"layer","velocity":0.5,"upper_body":[0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1]}"#);
    assert!(matches!(c.reply(), ServerMessage::Error(e) if e.seq == Some(10)));
    c.send_raw(&vec![b' '; (1 << 20) + 1]);
    assert!(matches!(c.reply(), ServerMessage::Error(_)));
    c.send(SteerCommand::navigate(11, 0.5, 0.0));
    assert_eq!(c.ack().seq, 11);
    server.stop();
}

#[test]
fn stalled_client_does_not_delay_the_runtime() {
    let (server, cfg) = start();
    // connects, sends a command, never reads
    let mut stalled = Client::connect(&server);
    stalled.send(SteerCommand::navigate(1, 1.5, 45.0));
    let mut healthy = Client::connect(&server);
    let t0 = Instant::now();
    let mut updates = 0;
    while t0.elapsed() < Duration::from_millis(1500) {
        healthy.state();
        updates += 1;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let stats = server.stop();
    let policy = stats.iter().find(|s| s.task == TaskId::Policy).unwrap();
    // the policy kept its 50 Hz cadence over the whole run
    let expected = 50.0 * elapsed;
    assert!(policy.activations as f64 >= 0.9 * expected, "{} policy ticks, expected about {expected}", policy.activations);
    assert!(updates as f64 >= 0.7 * cfg.server.broadcast_hz * 1.5, "{updates} updates");
    drop(stalled);
}

#[test]
fn runtime_runs_without_clients() {
    let (server, _) = start();
    std::thread::sleep(Duration::from_millis(200));
    let bus = server.bus().clone();
    let tick0 = bus.state.read().unwrap().value.tick;
    let seq = bus.external.publish(CommandMsg { command: PlanCommand::Navigate { velocity: 0.5, direction_deg: 180.0, style: "walk".into() }, client_seq: 3 }, server.clock().tick());
    std::thread::sleep(Duration::from_millis(400));
    assert!(bus.state.read().unwrap().value.tick > tick0);
    let plan = bus.plan.read().expect("planned without any client");
    assert_eq!(plan.value.cmd_seq, seq);
    // latest value stays put
    std::thread::sleep(Duration::from_millis(250));
    assert_eq!(bus.command.read().unwrap().value.cmd_seq, seq);
    assert_eq!(server.client_count(), 0);
    server.stop();
}

#[test]
fn ingest_empty_directory_warns() {
    let dir = tempfile::tempdir().unwrap();
    let report = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap();
    assert!(report.manifest.entries.is_empty());
    assert!(report.library.styles.is_empty() && report.library.skills.is_empty());
    assert_eq!(report.warnings.len(), 1);
}

#[test]
fn ingest_rejects_duplicate_names() {
    let dir = tempfile::tempdir().unwrap();
    let clip = synth::wave(desk(), 1.0, 0.5, 0.2);
    save_clip(&clip, dir.path().join("walk_01.mclp")).unwrap();
    save_clip(&clip, dir.path().join("walk_01.jsonl")).unwrap();
    assert!(ingest_dataset(dir.path(), &IngestOptions::default()).is_err());
    let dir = tempfile::tempdir().unwrap();
    // different files, same embedded clip name
    save_clip(&clip, dir.path().join("walk_01.mclp")).unwrap();
    save_clip(&clip, dir.path().join("walk_02.mclp")).unwrap();
    assert!(ingest_dataset(dir.path(), &IngestOptions::default()).is_err());
}

#[test]
fn ingest_accepts_only_50hz_unless_resampling() {
    let dir = tempfile::tempdir().unwrap();
    let sk = desk();
    let mut fast = synth::wave(sk.clone(), 2.0, 0.5, 0.2);
    fast.name = "walk_a".into();
    let mut slow = synth::wave(sk.clone(), 2.0, 1.0, 0.2).resampled(30.0).unwrap();
    slow.name = "walk_b".into();
    let mut squat = synth::desk_squat(sk.clone(), 2.0, 0.8);
    squat.name = "squat_a".into();
    save_clip(&fast, dir.path().join("walk_a.mclp")).unwrap();
    save_clip(&slow, dir.path().join("walk_b.jsonl")).unwrap();
    save_clip(&squat, dir.path().join("squat_a.mclp")).unwrap();
    std::fs::write(dir.path().join("run_x.mclp"), b"garbage").unwrap();
    std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();

    let strict = ingest_dataset(dir.path(), &IngestOptions { skill_hop: 5, ..Default::default() }).unwrap();
    let mut rejected: Vec<&str> = strict.rejected.iter().map(|r| r.file.as_str()).collect();
    rejected.sort();
    assert_eq!(rejected, vec!["run_x.mclp", "walk_b.jsonl"]);
    assert!(strict.rejected.iter().all(|r| !r.reason.is_empty()));
    assert_eq!(strict.manifest.entries.len(), 2);
    let squat_entry = strict.manifest.entries.iter().find(|e| e.id == "squat").unwrap();
    assert_eq!(squat_entry.kind, EntryKind::Skill);
    let zs: Vec<f64> = squat.frames.iter().map(|f| f.root_pos.z).collect();
    assert_eq!(squat_entry.pelvis_height, [zs.iter().cloned().fold(f64::INFINITY, f64::min), zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)]);

    let loose = ingest_dataset(dir.path(), &IngestOptions { resample: true, skill_hop: 5, ..Default::default() }).unwrap();
    assert_eq!(loose.rejected.len(), 1);
    assert_eq!(loose.library.styles["walk"].len(), 2);
    assert!(loose.library.styles["walk"].iter().all(|c| c.fps == 50.0));

    let g1 = SkeletonSpec::g1_29dof();
    let wrong = ingest_dataset(dir.path(), &IngestOptions { expected_skeleton: Some(&g1), skill_hop: 5, ..Default::default() }).unwrap();
    assert_eq!(wrong.manifest.entries.len(), 0);

    // the written manifest loads as a planner library
    write_manifest(dir.path(), &strict.manifest).unwrap();
    let (lib, manifest) = humtrack::planner::MotionLibrary::load(dir.path()).unwrap();
    assert_eq!(manifest, strict.manifest);
    assert!(lib.skills.contains_key("squat"));
}
