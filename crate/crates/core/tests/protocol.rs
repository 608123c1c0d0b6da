mod common;

use bhsim::dram::{CommandKind, Cycle, Device, DramAddress, DramCommand};
use bhsim::mitigation::{Mechanism, MitigationConfig};
use common::{count, preset, Replayer, Traffic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const COMMANDS: usize = 100_000;

fn random_command(rng: &mut ChaCha8Rng, device: &Device) -> DramCommand {
    let g = *device.geometry();
    let rows = [0, 5, 6, 100, g.rows_per_bank - 1];
    let a = DramAddress {
        channel: 0,
        rank: rng.gen_range(0..2),
        bankgroup: rng.gen_range(0..2),
        bank: rng.gen_range(0..2),
        row: rows[rng.gen_range(0..rows.len())],
        column: rng.gen_range(0..g.columns_per_row),
    };
    let open = device.bank(g.flat_bank(&a)).open_row;
    let roll = rng.gen_range(0..100);
    let kind = match (open, roll) {
        (_, 0..=2) => CommandKind::Ref,
        (_, 3..=5) => CommandKind::PreAll,
        (Some(_), 6..=60) => CommandKind::Rd,
        (Some(_), 61..=85) => CommandKind::Wr,
        (Some(_), _) => CommandKind::Pre,
        (None, 6..=70) => CommandKind::Act,
        (None, 71..=85) => CommandKind::Vrr,
        (None, 86..=92) => CommandKind::Rfm,
        (None, _) => CommandKind::Rd,
    };
    let row = match (kind, open) {
        (CommandKind::Rd | CommandKind::Wr, Some(r)) if rng.gen_bool(0.9) => r,
        _ => a.row,
    };
    DramCommand::new(kind, a.with_row(row))
}

#[test]
fn device_legality_agrees_with_replayer() {
    let p = preset();
    let mut device = Device::new(p.geometry, p.timing, 1, true);
    let mut replayer = Replayer::new(&p, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut now: Cycle = 0;
    let mut issued = [0usize; 8];
    for step in 0..COMMANDS {
        now += match rng.gen_range(0..100) {
            0..=79 => rng.gen_range(0..4),
            80..=97 => rng.gen_range(4..60),
            _ => rng.gen_range(60..900),
        };
        let cmd = random_command(&mut rng, &device);
        let legal = device.can_issue(&cmd, now).unwrap();
        let violations = replayer.check(&cmd, now);
        assert_eq!(
            legal,
            violations.is_empty(),
            "step {step}: {cmd:?} at {now}: device says {legal}, replayer {violations:?}"
        );
        if legal {
            device.issue(&cmd, now);
            replayer.apply(&cmd, now);
            issued[cmd.kind as usize] += 1;
        }
    }
    for kind in CommandKind::ALL {
        assert!(issued[kind as usize] >= 20, "{kind:?} issued only {} times", issued[kind as usize]);
    }
    assert!(replayer.checked > 20_000, "only {} legal commands", replayer.checked);
}

fn mitigation(mechanism: Mechanism, nrh: u32) -> MitigationConfig {
    let mut m = MitigationConfig::new(mechanism, nrh);
    if mechanism == Mechanism::Para {
        m.para_probability = Some(0.02);
    }
    m
}

#[test]
fn controller_streams_replay_without_violations() {
    let mut totals = [0usize; 8];
    let runs = [
        (Mechanism::None, 1024),
        (Mechanism::Para, 256),
        (Mechanism::Graphene, 256),
        (Mechanism::Rfm, 256),
        (Mechanism::Prac, 256),
        (Mechanism::BlockHammer, 256),
    ];
    for (i, (mechanism, nrh)) in runs.into_iter().enumerate() {
        let mut traffic = Traffic::new(&mitigation(mechanism, nrh), 11 + i as u64, true);
        traffic.banks = 32;
        if mechanism == Mechanism::BlockHammer {
            traffic.rows = 4096;
        }
        traffic.run_until_commands(COMMANDS, 50_000_000);
        let log = traffic.ctrl.command_log().unwrap();
        assert!(log.len() >= COMMANDS, "{mechanism:?}: only {} commands", log.len());
        let mut replayer = Replayer::new(&preset(), 1);
        let violations = replayer.replay(log);
        assert!(
            violations.is_empty(),
            "{mechanism:?}: {} violations, first: {:?}",
            violations.len(),
            &violations[..violations.len().min(5)]
        );
        for kind in CommandKind::ALL {
            totals[kind as usize] += count(log, kind);
        }
    }
    for kind in CommandKind::ALL {
        assert!(totals[kind as usize] > 0, "no {kind:?} in any stream");
    }
}

#[test]
fn replayer_flags_known_violations() {
    let p = preset();
    let t = p.timing;
    let mut r = Replayer::new(&p, 1);
    let bank = DramAddress::default().with_row(10);
    let act = DramCommand::new(CommandKind::Act, bank);
    r.apply(&act, 0);
    assert!(!r.check(&DramCommand::new(CommandKind::Rd, bank), t.t_rcd - 1).is_empty());
    assert!(r.check(&DramCommand::new(CommandKind::Rd, bank), t.t_rcd).is_empty());
    assert!(!r.check(&DramCommand::new(CommandKind::Pre, bank), t.t_ras - 1).is_empty());
    let mut other = bank;
    other.bank = 1;
    assert!(!r.check(&DramCommand::new(CommandKind::Act, other), t.t_rrd_l - 1).is_empty());
    assert!(r.check(&DramCommand::new(CommandKind::Act, other), t.t_rrd_l).is_empty());
    r.apply(&DramCommand::new(CommandKind::Pre, bank), t.t_ras);
    assert!(!r.check(&act, t.t_ras + t.t_rp - 1).is_empty());
    assert!(!r.check(&act, t.t_rc - 1).is_empty() || t.t_ras + t.t_rp >= t.t_rc);
    assert!(r.check(&act, (t.t_ras + t.t_rp).max(t.t_rc)).is_empty());

    let mut wide = p.clone();
    wide.timing.t_faw = 4 * t.t_rrd_s + 16;
    let t = wide.timing;
    let mut faw = Replayer::new(&wide, 1);
    let mut at = 0;
    for i in 0..4 {
        let a = DramAddress {
            bankgroup: i,
            ..Default::default()
        };
        assert!(faw.check(&DramCommand::new(CommandKind::Act, a), at).is_empty());
        faw.apply(&DramCommand::new(CommandKind::Act, a), at);
        at += t.t_rrd_s;
    }
    let fifth = DramAddress {
        bankgroup: 4,
        ..Default::default()
    };
    let v = faw.check(&DramCommand::new(CommandKind::Act, fifth), at);
    assert!(at < t.t_faw && v.iter().any(|m| m.starts_with("tFAW")), "{v:?}");
}
