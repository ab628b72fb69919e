use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ofcluster::harness::check::{ORPHAN_WINDOW, RELEASE_BEFORE_ACQUIRE};
use ofcluster::harness::explore::{explore, ExploreConfig};
use ofcluster::harness::metrics::{metrics, NOTIFICATION};
use ofcluster::harness::scenario::EventKind;
use ofcluster::harness::sweep::{sweep_random, FaultSpace};
use ofcluster::harness::trace::Node;
use ofcluster::harness::{check, run, Scenario, Trace, TraceEvent};
use ofcluster::netmodel::{controller_of, validate_mapping, ControllerId, ControllerSwitchMapping, MappingVerdict, Networks, PoolAddress, SwitchId};
use ofcluster::remap::{generate_mapping, MoveOutcome, Pins, Stats};
use ofcluster::sim::SimTime;

fn report(n: u32, ok: bool, what: &str) {
    println!("{} criterion {n}: {what}", if ok { "PASS" } else { "FAIL" });
}

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    Scenario::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn c(i: u32) -> ControllerId {
    ControllerId(i)
}

fn s(i: u32) -> SwitchId {
    SwitchId(i)
}

fn as_pairs(m: &ControllerSwitchMapping) -> BTreeMap<SwitchId, ControllerId> {
    m.as_map()
}

fn index_of(t: &Trace, pred: impl Fn(&TraceEvent, Node) -> bool) -> Option<usize> {
    t.records.iter().position(|r| pred(&r.event, r.node))
}

#[test]
fn criterion_1_fig3_golden_replay() {
    let sc = scenario("fig3");
    let started = Instant::now();
    let trace = run(&sc, 0);
    let elapsed = started.elapsed();

    let expected: Vec<BTreeMap<SwitchId, ControllerId>> = vec![
        [(1, 1), (2, 1), (3, 2), (4, 2), (5, 2)],
        [(1, 1), (2, 1), (3, 1), (4, 2), (5, 2)],
        [(1, 1), (2, 1), (3, 1), (4, 1), (5, 1)],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(|(sw, ct)| (s(sw), c(ct))).collect())
    .collect();
    let got: Vec<_> = trace.mapping_sequence().iter().map(as_pairs).collect();
    let seq_ok = got == expected;

    let p3 = PoolAddress::for_switch(s(3));
    let released = index_of(&trace, |e, n| {
        matches!(e, TraceEvent::AliasReleased { pool } if *pool == p3) && n == Node::Controller(c(2))
    });
    let acquired = index_of(&trace, |e, n| {
        matches!(e, TraceEvent::AliasAcquired { pool } if *pool == p3) && n == Node::Controller(c(1))
    });
    let order_ok = matches!((released, acquired), (Some(r), Some(a)) if r < a);

    let again = run(&sc, 0);
    let deterministic = again == trace && run(&sc, 7).mapping_sequence() == trace.mapping_sequence();
    let verdict = check(&trace);
    let fast = elapsed < Duration::from_secs(1);

    let ok = seq_ok && order_ok && deterministic && verdict.passed() && fast;
    report(
        1,
        ok,
        &format!(
            "fig3 sequence={seq_ok} p3 release@{released:?} < acquire@{acquired:?} deterministic={deterministic} checks={} in {elapsed:?}",
            verdict.passed()
        ),
    );
    assert!(seq_ok, "mapping sequence {got:?}");
    assert!(order_ok);
    assert!(deterministic);
    assert!(verdict.passed(), "{verdict}");
    assert!(fast, "{elapsed:?}");
}

#[test]
fn criterion_2_safety_sweep() {
    let seeds = 1000;
    let space = FaultSpace::default();
    assert!(space.max_controllers <= 4 && space.max_switches <= 16);
    let started = Instant::now();
    let results = sweep_random(0..seeds, &space);
    let elapsed = started.elapsed();
    let bad: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| {
            let why = r.verdict.checks.iter().find(|c| !c.passed).map_or("unsettled", |c| c.name);
            format!("{}:{why}", r.seed)
        })
        .collect();
    let kinds = |f: fn(&EventKind) -> bool| {
        (0..seeds)
            .filter(|&seed| ofcluster::harness::sweep::random_scenario(seed, &space).events.iter().any(|e| f(&e.kind)))
            .count()
    };
    let kills = kinds(|k| matches!(k, EventKind::FailController { .. }));
    let adds = kinds(|k| matches!(k, EventKind::AddController { .. }));
    let parts = kinds(|k| matches!(k, EventKind::Partition { .. }));
    let fast = elapsed < Duration::from_secs(300);
    let ok = bad.is_empty() && fast && kills > 0 && adds > 0 && parts > 0;
    report(
        2,
        ok,
        &format!(
            "{seeds} seeds, {} failing, schedules with kills={kills} adds={adds} partitions={parts}, {elapsed:?}",
            bad.len()
        ),
    );
    assert!(bad.is_empty(), "failing seeds {bad:?}");
    assert!(kills > 0 && adds > 0 && parts > 0);
    assert!(fast, "{elapsed:?}");
}

#[test]
fn criterion_3_election_interleavings() {
    let started = Instant::now();
    let fresh = explore(&ExploreConfig::default());
    let stale = explore(&ExploreConfig {
        initial: Some(c(9)),
        ..Default::default()
    });
    let elapsed = started.elapsed();
    let fast = elapsed < Duration::from_secs(60);
    let ok = fresh.passed() && stale.passed() && fast;
    report(
        3,
        ok,
        &format!(
            "n=3 fresh cell {} schedules, stale cell {} schedules, exhaustive={} failures={} in {elapsed:?}",
            fresh.schedules,
            stale.schedules,
            fresh.exhaustive && stale.exhaustive,
            fresh.failures.len() + stale.failures.len()
        ),
    );
    assert!(fresh.passed(), "{:?}", fresh.failures.first());
    assert!(stale.passed(), "{:?}", stale.failures.first());
    assert!(fast, "{elapsed:?}");
}

#[test]
fn criterion_4_notification_latency() {
    let sc = scenario("failover");
    assert_eq!(sc.failure_detector.heartbeat_period_ms, 10.0);
    assert_eq!(sc.failure_detector.suspect_timeout_ms, 40.0);
    assert!(sc.latency.max_ms <= 2.0);

    // every survivor of every failure must be notified
    let mut live: BTreeSet<ControllerId> = sc.controllers.iter().map(|c| c.id).collect();
    let mut expected = 0;
    for e in &sc.events {
        if let EventKind::FailController { controller } = e.kind {
            live.remove(&controller);
            expected += live.len();
        }
    }

    let trace = run(&sc, 0);
    let lat = metrics(&trace).latencies(NOTIFICATION);
    let worst = lat.iter().copied().fold(0.0, f64::max);
    let ok = lat.len() == expected && worst <= 50.0;
    report(4, ok, &format!("{} of {expected} notifications, worst {worst} ms (bound 50 ms)", lat.len()));
    assert_eq!(lat.len(), expected);
    assert!(lat.iter().all(|&l| l <= 50.0), "{lat:?}");
}

#[test]
fn criterion_5_migration_storm() {
    let sc = scenario("storm");
    let started = Instant::now();
    let trace = run(&sc, 0);
    let elapsed = started.elapsed();

    let reports: Vec<_> = trace
        .records
        .iter()
        .filter_map(|r| match &r.event {
            TraceEvent::MoveReport { report } if report.entries.iter().any(|e| e.order.from.is_some()) => Some(report),
            _ => None,
        })
        .collect();
    let one_cycle = reports.len() == 1 && reports[0].entries.len() == 254;
    let completed = reports.first().map_or(0, |r| {
        r.entries
            .iter()
            .filter(|e| e.outcome == MoveOutcome::Completed && e.order.from == Some(c(1)) && e.order.to == c(2))
            .count()
    });

    let summary = trace.summary().expect("summary");
    let final_ok = (1..=254).all(|i| summary.aliases.owner_of(PoolAddress::for_switch(s(i))) == Some(c(2)));
    let verdict = check(&trace);
    let rba = verdict.get(RELEASE_BEFORE_ACQUIRE).unwrap().checked;
    let orphan = verdict.get(ORPHAN_WINDOW).unwrap().checked;
    let fast = elapsed < Duration::from_secs(10);
    let ok = one_cycle && completed == 254 && final_ok && verdict.passed() && rba >= 254 && orphan >= 254 && fast;
    report(
        5,
        ok,
        &format!(
            "{completed}/254 moves completed in one cycle, final aliases on c2={final_ok}, ordering checked={rba} orphan checked={orphan}, {elapsed:?}"
        ),
    );
    assert!(one_cycle);
    assert_eq!(completed, 254);
    assert!(final_ok);
    assert!(verdict.passed(), "{verdict}");
    assert!(rba >= 254 && orphan >= 254);
    assert!(fast, "{elapsed:?}");
}

/// Saturated per-switch rate in responses per second: a controller holding
/// `q` switches serves one request per `base + quad * q^2` ms, shared by `q`.
fn analytic_mean_rate(k: usize, m: usize, base: f64, quad: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..k {
        let q = m / k + usize::from(i < m % k);
        if q > 0 {
            let per_switch = 1000.0 / (base + quad * (q * q) as f64) / q as f64;
            total += per_switch * q as f64;
        }
    }
    total / m as f64
}

#[test]
fn criterion_6_throughput_superlinear() {
    let mut analytic = Vec::new();
    let mut simulated = Vec::new();
    for k in 1..=4 {
        let sc = scenario(&format!("scaling-k{k}"));
        assert_eq!(sc.controllers.len(), k);
        let a = analytic_mean_rate(k, sc.switches as usize, sc.service.base_cost_ms, sc.service.quadratic_cost_ms);
        let rates = run(&sc, 0).summary().expect("summary").switch_rates.clone();
        assert_eq!(rates.len(), sc.switches as usize);
        analytic.push(a);
        simulated.push(rates.values().sum::<f64>() / rates.len() as f64);
    }
    // smallest analytic excess over the proportional baseline, less twice the tolerance
    let tol = 0.01;
    let margin = (2..=4)
        .map(|k| analytic[k - 1] / analytic[0] / k as f64)
        .fold(f64::INFINITY, f64::min)
        * (1.0 - tol)
        / (1.0 + tol);
    assert!(margin > 1.0);

    let within = simulated.iter().zip(&analytic).all(|(s, a)| ((s - a) / a).abs() <= tol);
    let increasing = simulated.windows(2).all(|w| w[1] > w[0]);
    let superlinear = (2..=4).all(|k| simulated[k - 1] / simulated[0] > k as f64 * margin);
    let ok = within && increasing && superlinear;
    let fmt: Vec<String> = simulated
        .iter()
        .zip(&analytic)
        .map(|(s, a)| format!("{s:.1}/{a:.1}"))
        .collect();
    report(
        6,
        ok,
        &format!("per-switch rate sim/analytic {fmt:?}, margin {margin:.3}, within 1%={within} increasing={increasing}"),
    );
    assert!(within, "{simulated:?} vs {analytic:?}");
    assert!(increasing);
    assert!(superlinear);
}

#[test]
fn criterion_7_startup_discovery() {
    let sc = scenario("startup");
    let discovery = SimTime::from_ms(sc.failure_detector.discovery_timeout_ms);
    let trace = run(&sc, 0);
    let first_view = |who: ControllerId| {
        trace.records.iter().find_map(|r| match r.event {
            TraceEvent::ViewInstalled { .. } if r.node == Node::Controller(who) => Some(r.time),
            _ => None,
        })
    };
    let start_of = |who: ControllerId| SimTime::from_ms(sc.controllers.iter().find(|x| x.id == who).unwrap().start_ms);
    let t1 = first_view(c(1)).expect("first joiner installs a view");
    let t2 = first_view(c(2)).expect("second joiner installs a view");
    let first = t1 - start_of(c(1));
    let second = t2 - start_of(c(2));
    let bound = SimTime::from_ms(sc.failure_detector.discovery_timeout_ms * 0.1);
    let ok = first == discovery && second < bound;
    report(
        7,
        ok,
        &format!(
            "first joiner after {} ms (discovery {} ms), second joiner after {} ms (< {} ms)",
            first.as_ms(),
            discovery.as_ms(),
            second.as_ms(),
            bound.as_ms()
        ),
    );
    assert_eq!(first, discovery);
    assert!(second < bound);
}

/// Exhaustive optimum over every complete assignment of `m` unit switches:
/// the least max load, then the fewest moves away from `current`.
fn brute_force(n: u32, m: u32, current: &BTreeMap<SwitchId, ControllerId>) -> (u32, u32) {
    let mut best = (u32::MAX, u32::MAX);
    for code in 0..n.pow(m) {
        let mut x = code;
        let mut loads = vec![0u32; n as usize];
        let mut moves = 0;
        for sw in 1..=m {
            let ct = x % n;
            x /= n;
            loads[ct as usize] += 1;
            if current.get(&s(sw)) != Some(&c(ct + 1)) {
                moves += 1;
            }
        }
        let max = loads.into_iter().max().unwrap_or(0);
        best = best.min((max, moves));
    }
    if m == 0 {
        best = (0, 0);
    }
    best
}

#[test]
fn criterion_8_generate_mapping_optimal() {
    let started = Instant::now();
    let mut instances = 0u64;
    let mut mismatches = Vec::new();
    for n in 1..=3u32 {
        let live: BTreeSet<ControllerId> = (1..=n).map(c).collect();
        let cs: Vec<ControllerId> = live.iter().copied().collect();
        for m in 0..=6u32 {
            let ss: Vec<SwitchId> = (1..=m).map(s).collect();
            let nets = Networks::full(&cs, &ss);
            let stats = Stats::uniform(ss.iter().copied(), 1u32);
            // each switch: unassigned, on a live controller, or on a dead one
            let choices = n + 2;
            for code in 0..choices.pow(m) {
                let mut cur = ControllerSwitchMapping::new();
                let mut x = code;
                for sw in 1..=m {
                    let k = x % choices;
                    x /= choices;
                    if k > 0 {
                        cur.insert(c(k), s(sw));
                    }
                }
                let cur_map = cur.as_map();
                let got = generate_mapping(&nets, &cur, &stats, &live, &Pins::new()).expect("live controllers");
                let switch_set: BTreeSet<SwitchId> = ss.iter().copied().collect();
                let complete = validate_mapping(&got, &live, &switch_set) == MappingVerdict::Complete;
                let mut loads: BTreeMap<ControllerId, u32> = BTreeMap::new();
                for sw in &ss {
                    if let Some(o) = controller_of(&got, *sw) {
                        *loads.entry(o).or_default() += 1;
                    }
                }
                let max = loads.values().copied().max().unwrap_or(0);
                let moves = ss.iter().filter(|sw| cur_map.get(sw) != controller_of(&got, **sw).as_ref()).count() as u32;
                let opt = brute_force(n, m, &cur_map);
                if !complete || (max, moves) != opt {
                    mismatches.push(format!("n={n} m={m} cur={cur_map:?} got={:?} opt={opt:?}", got.as_map()));
                }
                instances += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    let fast = elapsed < Duration::from_secs(60);
    let ok = mismatches.is_empty() && fast;
    report(8, ok, &format!("{instances} instances, {} off-optimum, {elapsed:?}", mismatches.len()));
    assert!(mismatches.is_empty(), "{:?}", &mismatches[..mismatches.len().min(5)]);
    assert!(fast, "{elapsed:?}");
}
