//! Replays recorded peer transcripts, intact and mutated, against each role.

use std::io::Write;
use std::thread;
use std::time::Duration;

use qudit_qkd::distill::DistillParams;
use qudit_qkd::netrun::{self, pipe, Conn, Frame, Role, RoleConfig, RoleReport, RoleStatus};
use qudit_qkd::SessionConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(role: Role) -> RoleConfig {
    RoleConfig {
        role,
        session: SessionConfig {
            n: 2,
            rounds: 600,
            channel: "identity".into(),
            sample_fraction: 0.2,
            seed: 21,
            ..Default::default()
        },
        distill: DistillParams {
            k: 1,
            r: 3,
            ..Default::default()
        },
    }
}

/// Frames sent by Alice and by Bob in an honest direct session.
fn record() -> (Vec<Frame>, Vec<Frame>) {
    let (alice, tap_a) = Conn::loopback_pair();
    let (tap_b, bob) = Conn::loopback_pair();
    let Conn { tx: mut to_alice, rx: from_alice } = tap_a;
    let Conn { tx: mut to_bob, rx: from_bob } = tap_b;
    let forward = thread::spawn(move || {
        let mut seen = Vec::new();
        while let Ok(f) = from_alice.recv() {
            to_bob.send(&f).unwrap();
            to_bob.flush().unwrap();
            seen.push(f);
        }
        seen
    });
    let back = thread::spawn(move || {
        let mut seen = Vec::new();
        while let Ok(f) = from_bob.recv() {
            to_alice.send(&f).unwrap();
            to_alice.flush().unwrap();
            seen.push(f);
        }
        seen
    });
    let b = thread::spawn(move || netrun::run_bob(&config(Role::Bob), bob));
    let a = netrun::run_alice(&config(Role::Alice), alice);
    let b = b.join().unwrap();
    assert_eq!(a.status, RoleStatus::Pass, "{:?}", a.detail);
    assert_eq!(b.status, RoleStatus::Pass);
    (forward.join().unwrap(), back.join().unwrap())
}

/// Feeds `bytes` to a role as its entire inbound stream.
fn replay(role: Role, bytes: Vec<u8>) -> RoleReport {
    let (mut w_in, r_in) = pipe();
    let (w_out, r_out) = pipe();
    let conn = Conn::new(r_in, w_out).with_timeout(Duration::from_secs(20));
    w_in.write_all(&bytes).unwrap();
    drop(w_in);
    let handle = thread::spawn(move || match role {
        Role::Alice => netrun::run_alice(&config(Role::Alice), conn),
        _ => netrun::run_bob(&config(Role::Bob), conn),
    });
    let report = handle.join().expect("role must not panic");
    drop(r_out);
    report
}

fn concat(frames: &[Frame]) -> Vec<u8> {
    frames.iter().flat_map(|f| f.to_bytes()).collect()
}

fn mutate(frames: &[Frame], rng: &mut ChaCha8Rng) -> Vec<u8> {
    match rng.gen_range(0..6) {
        0 => {
            let mut b = concat(frames);
            let i = rng.gen_range(0..b.len());
            b[i] ^= 1 << rng.gen_range(0..8);
            b
        }
        1 => {
            let mut b = concat(frames);
            b.truncate(rng.gen_range(0..b.len()));
            b
        }
        2 => {
            let mut f = frames.to_vec();
            f.remove(rng.gen_range(0..f.len()));
            concat(&f)
        }
        3 => {
            let mut f = frames.to_vec();
            let i = rng.gen_range(0..f.len());
            f.insert(i, f[i].clone());
            concat(&f)
        }
        4 => {
            let mut f = frames.to_vec();
            let i = rng.gen_range(0..f.len());
            let len = rng.gen_range(0..16);
            f[i].payload = (0..len).map(|_| rng.gen()).collect();
            concat(&f)
        }
        _ => {
            let mut f = frames.to_vec();
            let i = rng.gen_range(0..f.len());
            f[i].kind = rng.gen();
            concat(&f)
        }
    }
}

#[test]
fn intact_transcripts_replay_to_pass() {
    let (from_alice, from_bob) = record();
    let bob = replay(Role::Bob, concat(&from_alice));
    assert_eq!(bob.status, RoleStatus::Pass, "{:?}", bob.detail);
    let alice = replay(Role::Alice, concat(&from_bob));
    assert_eq!(alice.status, RoleStatus::Pass, "{:?}", alice.detail);
    assert_eq!(alice.final_key, bob.final_key);
}

#[test]
fn mutated_transcripts_never_crash_a_role() {
    let (from_alice, from_bob) = record();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = 0;
    for i in 0..400 {
        let (role, frames) = if i % 2 == 0 {
            (Role::Bob, &from_alice)
        } else {
            (Role::Alice, &from_bob)
        };
        let report = replay(role, mutate(frames, &mut rng));
        if report.status != RoleStatus::Pass {
            failures += 1;
            assert_ne!(report.exit_code(), 0);
        }
    }
    // Sign flips inside a qudit or a parity bitmap can still complete; most
    // mutations must not.
    assert!(failures > 300, "{failures}");
}

#[test]
fn unknown_frame_type_is_a_protocol_error() {
    let (from_alice, _) = record();
    let mut f = from_alice.clone();
    f[0].kind = 0x42;
    let bob = replay(Role::Bob, concat(&f));
    assert_eq!(bob.status, RoleStatus::ProtocolError);
}

#[test]
fn random_bytes_never_crash_a_role() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..200 {
        let len = rng.gen_range(0..300);
        let mut bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        if i % 3 == 0 && bytes.len() >= 4 {
            // Plausible length prefix so the payload decoders are reached.
            let body = (bytes.len() - 4) as u32;
            bytes[..4].copy_from_slice(&body.to_be_bytes());
        }
        let role = if i % 2 == 0 { Role::Alice } else { Role::Bob };
        let report = replay(role, bytes);
        assert_ne!(report.status, RoleStatus::Pass);
    }
}
