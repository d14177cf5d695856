use super::*;
use crate::topology::NodeSpec;

fn a(s: &str) -> Ipv4Addr {
    s.parse().unwrap()
}

struct Net {
    sim: Simulation,
    ha: NodeId,
    fa1: NodeId,
    fa2: NodeId,
    cn: NodeId,
    mn: NodeId,
    eve: NodeId,
    home: SubnetId,
    visit1: SubnetId,
    visit2: SubnetId,
    dark: SubnetId,
}

fn net(lifetime: Option<u16>) -> Net {
    let mut t = Topology::new();
    let home = t.add_subnet("home").unwrap();
    let visit1 = t.add_subnet("visit1").unwrap();
    let visit2 = t.add_subnet("visit2").unwrap();
    let corr = t.add_subnet("corr").unwrap();
    let dark = t.add_subnet("dark").unwrap();
    let mut add = |name: &str, role, addr: &str, subnet, ha: Option<&str>, lifetime| {
        t.add_node(NodeSpec {
            name: name.into(),
            role,
            address: a(addr),
            subnet,
            home_agent: ha.map(a),
            care_of_address: None,
            lifetime,
        })
        .unwrap()
    };
    let ha = add("ha", Role::HomeAgent, "10.0.1.1", home, None, None);
    let fa1 = add("fa1", Role::ForeignAgent, "10.0.2.1", visit1, None, None);
    let fa2 = add("fa2", Role::ForeignAgent, "10.0.3.1", visit2, None, None);
    add("r", Role::Router, "10.0.9.1", corr, None, None);
    let cn = add("cn", Role::Correspondent, "10.0.9.5", corr, None, None);
    let eve = add("eve", Role::Attacker, "10.0.9.66", corr, None, None);
    let mn = add("mn", Role::MobileNode, "10.0.1.5", home, Some("10.0.1.1"), lifetime);
    let mut sim = Simulation::new(t, SimConfig::default()).unwrap();
    sim.add_association(mn, ha, SecurityContext::hmac_md5(256, vec![0x11; 16]).unwrap()).unwrap();
    sim.add_association(fa1, ha, SecurityContext::hmac_md5(300, vec![0x22; 16]).unwrap()).unwrap();
    sim.add_association(fa2, ha, SecurityContext::hmac_md5(301, vec![0x33; 16]).unwrap()).unwrap();
    Net {
        sim,
        ha,
        fa1,
        fa2,
        cn,
        mn,
        eve,
        home,
        visit1,
        visit2,
        dark,
    }
}

fn at(ms: u64, kind: SimEventKind) -> SimEvent {
    SimEvent::new(SimTime::from_millis(ms), kind)
}

fn send(src: NodeId, dst: NodeId, text: &str) -> SimEventKind {
    SimEventKind::SendData {
        src,
        dst,
        payload: text.as_bytes().to_vec(),
    }
}

fn records(sim: &Simulation, kind: TraceKind) -> Vec<&TraceRecord> {
    sim.trace().iter().filter(|r| r.kind == kind).collect()
}

#[test]
fn empty_queue_gives_empty_trace() {
    let mut n = net(None);
    assert!(n.sim.run().is_empty());
    assert!(n.sim.run_until(SimTime::from_secs(10)).is_empty());
}

#[test]
fn events_run_in_time_then_insertion_order() {
    let mut n = net(None);
    n.sim.schedule(at(5000, SimEventKind::Move { node: n.mn, subnet: n.dark })).unwrap();
    n.sim.schedule(at(3000, SimEventKind::Move { node: n.mn, subnet: n.visit2 })).unwrap();
    n.sim.schedule(at(3000, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    let moves: Vec<(u64, &str)> = n
        .sim
        .trace()
        .iter()
        .filter(|r| r.get("event") == Some("move"))
        .map(|r| (r.time.as_millis(), r.get("subnet").unwrap()))
        .collect();
    assert_eq!(moves, vec![(3000, "visit2"), (3000, "visit1"), (5000, "dark")]);
}

#[test]
fn past_events_are_rejected() {
    let mut n = net(None);
    n.sim.run_until(SimTime::from_secs(2));
    let err = n.sim.schedule(at(1000, SimEventKind::End)).unwrap_err();
    assert_eq!(
        err,
        SimError::PastEvent {
            at: SimTime::from_secs(1),
            now: SimTime::from_secs(2)
        }
    );
    assert!(n.sim.schedule(at(2000, SimEventKind::End)).is_ok());
}

#[test]
fn schedule_validates_roles() {
    let mut n = net(None);
    let cn = n.cn;
    assert!(matches!(
        n.sim.schedule(at(0, SimEventKind::Move { node: cn, subnet: n.home })),
        Err(SimError::NotMobile(_))
    ));
    let forge = SimEventKind::InjectForgedRrq {
        attacker: cn,
        victim_home: a("10.0.1.5"),
        coa: a("10.0.9.66"),
        spi: ForgedSpi::Real,
    };
    assert!(matches!(n.sim.schedule(at(0, forge)), Err(SimError::NotAttacker(_))));
    let forge = SimEventKind::InjectForgedRrq {
        attacker: n.eve,
        victim_home: a("10.0.9.5"),
        coa: a("10.0.9.66"),
        spi: ForgedSpi::Real,
    };
    assert_eq!(n.sim.schedule(at(0, forge)), Err(SimError::NotAHomeAddress(a("10.0.9.5"))));
    assert_eq!(
        n.sim.schedule(at(0, SimEventKind::Move { node: NodeId(99), subnet: n.home })),
        Err(SimError::UnknownNode(99))
    );
}

#[test]
fn association_roles_follow_node_roles() {
    let mut n = net(None);
    let ctx = SecurityContext::hmac_md5(999, vec![1; 16]).unwrap();
    assert_eq!(n.sim.add_association(n.fa1, n.mn, ctx.clone()), Ok(RolePair::MnFa));
    assert_eq!(
        n.sim.add_association(n.cn, n.mn, ctx),
        Err(SimError::Association(Role::Correspondent, Role::MobileNode))
    );
}

#[test]
fn move_to_foreign_subnet_registers_with_advertised_coa() {
    let mut n = net(None);
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    let adv = records(&n.sim, TraceKind::Adv);
    assert_eq!(adv.len(), 1);
    assert_eq!(adv[0].time, SimTime::from_secs(1));
    assert_eq!(adv[0].get("coa"), Some("10.0.2.1"));
    let rrq = records(&n.sim, TraceKind::Rrq);
    assert_eq!(rrq[0].src, "mn");
    assert_eq!(rrq[0].get("coa"), Some("10.0.2.1"));
    assert_eq!(rrq[0].get("ext"), Some("MHAE"));
    assert_eq!(rrq[1].src, "fa1");
    assert_eq!(rrq[1].get("ext"), Some("MHAE,FHAE"));
    let rrp = records(&n.sim, TraceKind::Rrp);
    assert_eq!(rrp.iter().map(|r| r.get("code").unwrap()).collect::<Vec<_>>(), ["0", "0"]);
    assert_eq!(rrp[1].get("ext"), Some("MHAE"));
    assert!(n.sim.mobile_node(n.mn).unwrap().is_registered());
    assert_eq!(n.sim.home_agent(n.ha).unwrap().binding(a("10.0.1.5")).unwrap().care_of_address, a("10.0.2.1"));
    assert!(n.sim.foreign_agent(n.fa1).unwrap().visitor(a("10.0.1.5")).is_some());
}

#[test]
fn registration_timing_follows_link_delay() {
    let mut n = net(None);
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    let times: Vec<u64> = n
        .sim
        .trace()
        .iter()
        .filter(|r| matches!(r.kind, TraceKind::Rrq | TraceKind::Rrp))
        .map(|r| r.time.as_millis())
        .collect();
    assert_eq!(times, vec![1000, 1010, 1020, 1030]);
    let reg = n.sim.trace().iter().find(|r| r.get("event") == Some("registered")).unwrap();
    assert_eq!(reg.time.as_millis(), 1040);
}

#[test]
fn returning_home_deregisters() {
    let mut n = net(None);
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.schedule(at(5000, SimEventKind::Move { node: n.mn, subnet: n.home })).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    let last_rrq = records(&n.sim, TraceKind::Rrq).into_iter().last().unwrap();
    assert_eq!((last_rrq.src.as_str(), last_rrq.dst.as_str()), ("mn", "ha"));
    assert_eq!(last_rrq.get("lifetime"), Some("0"));
    assert_eq!(last_rrq.get("coa"), Some("10.0.1.5"));
    assert!(n.sim.home_agent(n.ha).unwrap().bindings().is_empty());
    assert_eq!(n.sim.mobile_node(n.mn).unwrap().phase(), MnPhase::AtHome);
}

#[test]
fn agentless_subnet_is_noted() {
    let mut n = net(None);
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.dark })).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    assert!(n.sim.trace().iter().any(|r| r.kind == TraceKind::Note && r.get("event") == Some("no-agent")));
    assert!(records(&n.sim, TraceKind::Rrq).is_empty());
    assert_eq!(n.sim.mobile_node(n.mn).unwrap().phase(), MnPhase::Unregistered);
}

#[test]
fn renewal_keeps_binding_alive() {
    let mut n = net(Some(8));
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.schedule(at(30_000, SimEventKind::End)).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    // registered at 1.040, then renewed every 6 s
    let regs: Vec<u64> = n
        .sim
        .trace()
        .iter()
        .filter(|r| r.get("event") == Some("registered"))
        .map(|r| r.time.as_millis())
        .collect();
    assert_eq!(regs, vec![1040, 7080, 13120, 19160, 25200]);
    assert!(n.sim.home_agent(n.ha).unwrap().binding(a("10.0.1.5")).is_some());
    assert!(!n.sim.trace().iter().any(|r| r.get("event") == Some("binding-expired")));
}

#[test]
fn expired_binding_stops_tunneling() {
    let mut n = net(Some(4));
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.schedule(at(2000, send(n.cn, n.mn, "before"))).unwrap();
    n.sim.schedule(at(2500, SimEventKind::Move { node: n.mn, subnet: n.dark })).unwrap();
    n.sim.schedule(at(6000, send(n.cn, n.mn, "after"))).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    let tunnels = records(&n.sim, TraceKind::Tunnel);
    assert_eq!(tunnels.len(), 1);
    assert_eq!(tunnels[0].get("seq"), Some("1"));
    assert!(n.sim.trace().iter().any(|r| r.get("event") == Some("binding-expired")));
    assert_eq!(n.sim.queued(n.ha, a("10.0.1.5")), 1);
    assert_eq!(n.sim.deliveries().len(), 1);
}

#[test]
fn triangle_routing_paths() {
    let mut n = net(None);
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.schedule(at(2000, send(n.cn, n.mn, "ping"))).unwrap();
    n.sim.schedule(at(2000, send(n.mn, n.cn, "pong"))).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    let d = n.sim.deliveries();
    assert_eq!(d.len(), 2);
    let (to_mn, to_cn) = if d[0].dst == n.mn { (&d[0], &d[1]) } else { (&d[1], &d[0]) };
    assert!(to_mn.visited(n.ha));
    assert_eq!((to_mn.count_ops(HopOp::Encapsulate), to_mn.count_ops(HopOp::Decapsulate)), (1, 1));
    assert_eq!(to_mn.payload, b"ping");
    assert!(!to_cn.visited(n.ha));
    assert_eq!((to_cn.count_ops(HopOp::Encapsulate), to_cn.count_ops(HopOp::Decapsulate)), (0, 0));
    let data = records(&n.sim, TraceKind::Data);
    let ping = data.iter().find(|r| r.get("payload") == Some("ping")).unwrap();
    assert_eq!(ping.get("hops"), Some("cn,r,ha,fa1,mn"));
    let pong = data.iter().find(|r| r.get("payload") == Some("pong")).unwrap();
    assert_eq!(pong.get("hops"), Some("mn,fa1,r,cn"));
}

#[test]
fn home_traffic_is_not_tunneled() {
    let mut n = net(None);
    n.sim.schedule(at(100, send(n.cn, n.mn, "hi"))).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    let d = &n.sim.deliveries()[0];
    assert_eq!(d.count_ops(HopOp::Encapsulate), 0);
    assert!(d.visited(n.ha));
    assert!(records(&n.sim, TraceKind::Tunnel).is_empty());
}

#[test]
fn handoff_queue_flushes_on_registration() {
    let mut n = net(None);
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.schedule(at(2000, SimEventKind::Move { node: n.mn, subnet: n.visit2 })).unwrap();
    for (i, ms) in [2100u64, 2400, 2700].into_iter().enumerate() {
        n.sim.schedule(at(ms, send(n.cn, n.mn, &format!("p{i}")))).unwrap();
    }
    n.sim.run_until(SimTime::from_secs(60));
    let queued = n.sim.trace().iter().filter(|r| r.get("event") == Some("queued")).count();
    assert_eq!(queued, 3);
    let got: Vec<&[u8]> = n.sim.deliveries().iter().map(|d| d.payload.as_slice()).collect();
    assert_eq!(got, vec![b"p0".as_slice(), b"p1", b"p2"]);
    assert!(n.sim.deliveries().iter().all(|d| d.visited(n.fa2)));
}

#[test]
fn queue_overflow_drops_oldest() {
    let mut t = net(None);
    t.sim.config.queue_limit = 2;
    t.sim.schedule(at(0, SimEventKind::Move { node: t.mn, subnet: t.visit1 })).unwrap();
    t.sim.schedule(at(2000, SimEventKind::Move { node: t.mn, subnet: t.dark })).unwrap();
    for i in 0..3u64 {
        t.sim.schedule(at(2100 + i * 10, send(t.cn, t.mn, &format!("p{i}")))).unwrap();
    }
    t.sim.run_until(SimTime::from_secs(3));
    let drop = records(&t.sim, TraceKind::Drop);
    assert_eq!(drop.len(), 1);
    assert_eq!(drop[0].get("reason"), Some("queue-overflow"));
    assert_eq!(drop[0].get("seq"), Some("1"));
    assert_eq!(t.sim.queued(t.ha, a("10.0.1.5")), 2);
}

#[test]
fn forged_requests_are_denied_and_change_nothing() {
    let mut n = net(None);
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.run_until(SimTime::from_secs(2));
    let before = n.sim.home_agent(n.ha).unwrap().bindings().clone();
    let mutations = n.sim.home_agent(n.ha).unwrap().binding_mutations();
    for (i, spi) in [ForgedSpi::Real, ForgedSpi::Random, ForgedSpi::Fixed(77777)].into_iter().enumerate() {
        let ev = SimEventKind::InjectForgedRrq {
            attacker: n.eve,
            victim_home: a("10.0.1.5"),
            coa: a("10.0.9.66"),
            spi,
        };
        n.sim.schedule(at(3000 + i as u64 * 100, ev)).unwrap();
    }
    n.sim.schedule(at(4000, send(n.cn, n.mn, "secret"))).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    let forged = records(&n.sim, TraceKind::Rrq).into_iter().filter(|r| r.get("forged") == Some("yes")).count();
    assert_eq!(forged, 3);
    assert_eq!(records(&n.sim, TraceKind::Rrq).iter().find(|r| r.get("forged").is_some()).unwrap().get("spi"), Some("256"));
    let replies: Vec<&str> = records(&n.sim, TraceKind::Rrp)
        .into_iter()
        .filter(|r| r.dst == "eve")
        .map(|r| r.get("code").unwrap())
        .collect();
    assert_eq!(replies, vec!["131", "131", "131"]);
    assert_eq!(n.sim.home_agent(n.ha).unwrap().bindings(), &before);
    assert_eq!(n.sim.home_agent(n.ha).unwrap().binding_mutations(), mutations);
    let d = n.sim.deliveries();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].dst, n.mn);
}

#[test]
fn end_stops_processing() {
    let mut n = net(None);
    n.sim.schedule(at(1000, SimEventKind::End)).unwrap();
    n.sim.schedule(at(2000, send(n.cn, n.mn, "late"))).unwrap();
    let out = n.sim.run_until(SimTime::from_secs(60));
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].to_string(), "1.000\tNOTE\t*->*\tevent=end");
    assert!(n.sim.is_ended());
    assert!(n.sim.deliveries().is_empty());
}

#[test]
fn advertise_tick_beacons_every_agent() {
    let mut n = net(None);
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit2 })).unwrap();
    n.sim.schedule(at(500, SimEventKind::AdvertiseTick)).unwrap();
    n.sim.run_until(SimTime::from_secs(60));
    let adv = records(&n.sim, TraceKind::Adv);
    assert_eq!(adv.iter().map(|r| r.src.as_str()).collect::<Vec<_>>(), ["ha", "fa1", "fa2"]);
    // the node registers off the tick, and the lazy beacon at 1.0 s is moot
    assert_eq!(records(&n.sim, TraceKind::Rrq)[0].time.as_millis(), 500);
    assert_eq!(n.sim.home_agent(n.ha).unwrap().binding(a("10.0.1.5")).unwrap().care_of_address, a("10.0.3.1"));
}

#[test]
fn lossy_links_drop_data_only() {
    let mut n = net(None);
    n.sim.topo.loss = 0.5;
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    for i in 0..40u64 {
        n.sim.schedule(at(2000 + i * 50, send(n.cn, n.mn, "x"))).unwrap();
    }
    n.sim.run_until(SimTime::from_secs(60));
    assert!(n.sim.mobile_node(n.mn).unwrap().is_registered());
    let lost = records(&n.sim, TraceKind::Drop).iter().filter(|r| r.get("reason") == Some("lost")).count();
    assert!(lost > 0);
    assert_eq!(lost + n.sim.deliveries().len(), 40);
}

#[test]
fn identical_runs_give_identical_traces() {
    let run = |seed| {
        let mut n = net(None);
        n.sim.rng = ChaCha8Rng::seed_from_u64(seed);
        n.sim.topo.loss = 0.2;
        n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
        for i in 0..20u64 {
            n.sim.schedule(at(1500 + i * 100, send(n.cn, n.mn, "d"))).unwrap();
            let ev = SimEventKind::InjectForgedRrq {
                attacker: n.eve,
                victim_home: a("10.0.1.5"),
                coa: a("10.0.9.66"),
                spi: ForgedSpi::Random,
            };
            n.sim.schedule(at(1500 + i * 100, ev)).unwrap();
        }
        n.sim.run_until(SimTime::from_secs(60));
        n.sim.render_trace()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn trace_times_are_nondecreasing() {
    let mut n = net(Some(10));
    n.sim.schedule(at(0, SimEventKind::Move { node: n.mn, subnet: n.visit1 })).unwrap();
    n.sim.schedule(at(4000, SimEventKind::Move { node: n.mn, subnet: n.visit2 })).unwrap();
    n.sim.schedule(at(9000, SimEventKind::Move { node: n.mn, subnet: n.home })).unwrap();
    for i in 0..100u64 {
        n.sim.schedule(at(i * 130, send(n.cn, n.mn, "s"))).unwrap();
    }
    n.sim.run_until(SimTime::from_secs(60));
    assert!(n.sim.trace().windows(2).all(|w| w[0].time <= w[1].time));
}

