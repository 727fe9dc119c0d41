//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Tolerances: every comparison is exact rational or bit equality; the only
//! slack is wall time, bounded per criterion below.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_traits::Zero;
use topocdc::bounds::{d_star, l_star, uncoded_load};
use topocdc::exact::{int, ratio, ratio_string, Rational};
use topocdc::experiment::{run_single, ExperimentConfig, RunRow, Sizing, TopologyKind};
use topocdc::job::{assign_reducers, intermediate_value, map_phase, needed_values, place_files, JobSpec};
use topocdc::routing::{shuffle_fat_tree, shuffle_star, SwitchBuffer};
use topocdc::shuffle::{build_messages, decode, SubMessage};
use topocdc::topology::{build_fat_tree, build_star, place_servers, Layer};
use topocdc::Error;

const FORMULA_LIMIT: Duration = Duration::from_secs(1);
const STAR_LIMIT: Duration = Duration::from_secs(10);
const FAT_TREE_LIMIT: Duration = Duration::from_secs(30);

const STAR_LOADS: [usize; 5] = [1, 2, 4, 8, 16];
const FAT_TREE_LOADS: [usize; 4] = [1, 2, 4, 8];
/// Divisible by r·(t/2)² for every fat-tree load above.
const T_DIVISIBLE: usize = 64;
/// Not divisible by r for r ∈ {4, 8}.
const T_PADDED: usize = 66;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(failures: Vec<String>, ok: impl Into<String>) -> Outcome {
    if failures.is_empty() {
        Outcome { pass: true, detail: ok.into() }
    } else {
        Outcome { pass: false, detail: failures.join("; ") }
    }
}

fn config(topology: TopologyKind, value_bits: usize) -> ExperimentConfig {
    ExperimentConfig {
        servers: 16,
        loads: Vec::new(),
        reducers: 1,
        files: Sizing::default(),
        functions: Sizing::default(),
        value_bits,
        topology,
        seed: 2024,
    }
}

fn runs(topology: TopologyKind, value_bits: usize, loads: &[usize]) -> Result<Vec<RunRow>, Error> {
    let cfg = config(topology, value_bits);
    loads.iter().enumerate().map(|(id, &r)| run_single(&cfg, r, id)).collect()
}

fn label(row: &RunRow) -> String {
    format!("{} r={} T={}", row.topology, row.r, row.value_bits)
}

fn criterion_1() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |what: String, got: Rational, want: Rational| {
        if got != want {
            failures.push(format!("{what} = {} != {}", ratio_string(&got), ratio_string(&want)));
        }
    };
    expect("l_star(16,2,1)".into(), l_star(16, 2, 1).unwrap(), ratio(7, 16));
    expect("d_star(16,2,1)".into(), d_star(16, 2, 1).unwrap(), ratio(21, 256));
    for k in 2..=8 {
        for s in 1..=2 {
            expect(format!("l_star({k},{k},{s})"), l_star(k, k, s).unwrap(), Rational::zero());
            expect(format!("d_star({k},{k},{s})"), d_star(k, k, s).unwrap(), Rational::zero());
        }
    }
    let mut count = 0;
    for k in 1..=32usize {
        for r in 1..=k {
            let closed = ratio(1, r as i64) * (int(1) - ratio(r as i64, k as i64));
            expect(format!("l_star({k},{r},1)"), l_star(k, r, 1).unwrap(), closed);
            count += 1;
        }
    }
    outcome(failures, format!("golden values and {count} closed-form points match exactly"))
}

fn optimality(rows: &[RunRow], require_zero_padding: bool) -> Vec<String> {
    let mut failures = Vec::new();
    for row in rows {
        if row.d_excluding_padding != row.d_star {
            failures.push(format!(
                "{}: D excluding padding {} != D* {}",
                label(row),
                ratio_string(&row.d_excluding_padding),
                ratio_string(&row.d_star)
            ));
        }
        let padded = !row.loads.padding_bits.is_zero();
        if require_zero_padding && padded {
            failures.push(format!("{}: unexpected padding {}", label(row), ratio_string(&row.loads.padding_bits)));
        }
        if !padded && row.d_measured != row.d_star {
            failures.push(format!(
                "{}: D {} != D* {}",
                label(row),
                ratio_string(&row.d_measured),
                ratio_string(&row.d_star)
            ));
        }
        if row.d_measured > &row.d_star + &row.loads.max_link_padding {
            failures.push(format!("{}: D exceeds D* plus its padding share", label(row)));
        }
    }
    failures
}

fn criterion_2(star: &[RunRow]) -> Outcome {
    let failures = optimality(star, true);
    let points: Vec<String> = star.iter().map(|r| format!("r={}:{}", r.r, ratio_string(&r.d_measured))).collect();
    outcome(failures, format!("D = D* on the star ({})", points.join(" ")))
}

fn criterion_3(divisible: &[RunRow], padded: &[RunRow]) -> Outcome {
    let mut failures = optimality(divisible, true);
    failures.extend(optimality(padded, false));
    if padded.iter().all(|r| r.loads.padding_bits.is_zero()) {
        failures.push(format!("T={T_PADDED} produced no padding to report"));
    }
    let overhead: Vec<String> = padded
        .iter()
        .map(|r| format!("r={}:+{}", r.r, ratio_string(&(&r.d_measured - &r.d_star))))
        .collect();
    outcome(
        failures,
        format!("D = D* with zero padding at T={T_DIVISIBLE}; at T={T_PADDED} padding overhead {}", overhead.join(" ")),
    )
}

fn criterion_4(fat_tree: &[&RunRow]) -> Outcome {
    let mut failures = Vec::new();
    let mut quantified = 0;
    for row in fat_tree {
        if row.link_bounds.len() != 6 {
            failures.push(format!("{}: {} bound classes, expected 6", label(row), row.link_bounds.len()));
        }
        let up_links: usize = row.link_bounds.iter().filter(|b| b.name.starts_with("uplink")).map(|b| b.links).sum();
        let down_links: usize =
            row.link_bounds.iter().filter(|b| b.name.starts_with("downlink")).map(|b| b.links).sum();
        if up_links != 48 || down_links != 48 {
            failures.push(format!("{}: bounds cover {up_links}/{down_links} links, expected 48", label(row)));
        }
        for b in &row.link_bounds {
            quantified += b.links;
            if !b.pass {
                failures.push(format!(
                    "{}: {} violated on {} links (worst {} > {})",
                    label(row),
                    b.name,
                    b.violations,
                    ratio_string(&b.worst_bits),
                    ratio_string(&b.bound_bits)
                ));
            }
        }
    }
    outcome(failures, format!("{quantified} link-direction bounds hold over {} fat-tree runs", fat_tree.len()))
}

fn criterion_5(all: &[&RunRow]) -> Outcome {
    let mut failures = Vec::new();
    for row in all {
        let converse_up = l_star(row.servers, row.r, row.s).unwrap();
        let converse_down = int(row.s as u64) * (int(1) - ratio(row.r as i64, row.servers as i64));
        if row.loads.server_uplink != converse_up {
            failures.push(format!(
                "{}: uplink {} != L* {}",
                label(row),
                ratio_string(&row.loads.server_uplink),
                ratio_string(&converse_up)
            ));
        }
        if row.loads.server_downlink != converse_down {
            failures.push(format!(
                "{}: downlink {} != {}",
                label(row),
                ratio_string(&row.loads.server_downlink),
                ratio_string(&converse_down)
            ));
        }
        if row.l_star != converse_up {
            failures.push(format!("{}: reported L* differs", label(row)));
        }
    }
    outcome(failures, format!("uplink = L*, downlink = s(1-r/K) in {} runs", all.len()))
}

/// Independent content check: recompute every needed value from the PRF.
fn content_check(topology: TopologyKind, r: usize) -> Result<usize, String> {
    let job = JobSpec::new(16, r, 1, subset_count(16, r), 16, T_DIVISIBLE).map_err(|e| e.to_string())?;
    let placement = place_files(&job);
    let assignment = assign_reducers(&job);
    let seed = 77;
    let store = map_phase(&job, &placement, seed);
    let (set, outcome) = match topology {
        TopologyKind::Star => {
            let set = build_messages(&job, &placement, &assignment, &store, 1).map_err(|e| e.to_string())?;
            let out = shuffle_star(&set.messages, &build_star(16)).map_err(|e| e.to_string())?;
            (set, out)
        }
        TopologyKind::FatTree => {
            let tree = build_fat_tree(4).map_err(|e| e.to_string())?;
            let map = place_servers(&tree, 16).map_err(|e| e.to_string())?;
            let set = build_messages(&job, &placement, &assignment, &store, 4).map_err(|e| e.to_string())?;
            let out = shuffle_fat_tree(&set.messages, &tree, &map).map_err(|e| e.to_string())?;
            (set, out)
        }
    };
    let mut checked = 0;
    for useful in &outcome.delivered {
        let j = useful.server;
        let recovered = decode(&job, &placement, &assignment, &store, &set.layout, j, useful)
            .map_err(|e| e.to_string())?;
        let needed = needed_values(&job, &placement, &assignment, j);
        if recovered.len() != needed.len() {
            return Err(format!("server {j} recovered {} of {}", recovered.len(), needed.len()));
        }
        for id in needed {
            let want = intermediate_value(seed, id.function, id.file, T_DIVISIBLE);
            if recovered.get(&id) != Some(&want) {
                return Err(format!("server {j} holds a wrong v_({}, {})", id.function, id.file));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn subset_count(k: u64, r: usize) -> usize {
    topocdc::subset::binomial_u64(k, r as u64).unwrap() as usize
}

/// Flip one bit of delivered payloads and expect the receiver to reject.
fn corruption_check() -> Result<usize, String> {
    let job = JobSpec::new(16, 2, 1, 120, 16, T_PADDED).map_err(|e| e.to_string())?;
    let placement = place_files(&job);
    let assignment = assign_reducers(&job);
    let store = map_phase(&job, &placement, 5);
    let set = build_messages(&job, &placement, &assignment, &store, 1).map_err(|e| e.to_string())?;
    let outcome = shuffle_star(&set.messages, &build_star(16)).map_err(|e| e.to_string())?;
    let mut trials = 0;
    for useful in &outcome.delivered {
        let count = useful.messages.len();
        for (m, msg) in useful.messages.iter().enumerate() {
            // Every bit of the first message, then one rotating bit per message.
            let positions: Vec<usize> = if m == 0 { (0..msg.payload.len()).collect() } else { vec![m % msg.payload.len()] };
            for bit in positions {
                let mut corrupted = useful.clone();
                let target: &mut SubMessage = &mut corrupted.messages[m % count];
                let flipped = !target.payload[bit];
                target.payload.set(bit, flipped);
                match decode(&job, &placement, &assignment, &store, &set.layout, useful.server, &corrupted) {
                    Err(Error::DecodeFailure { .. }) => trials += 1,
                    Err(other) => return Err(format!("wrong error kind: {other}")),
                    Ok(_) => return Err(format!("server {} accepted a flipped bit {bit} in message {m}", useful.server)),
                }
            }
        }
    }
    Ok(trials)
}

fn criterion_6(all: &[&RunRow]) -> Outcome {
    let mut failures = Vec::new();
    for row in all {
        let per_server = row.functions / row.servers * (row.files - row.files * row.r / row.servers);
        if row.decoded_servers != row.servers || row.decoded_values != per_server * row.servers {
            failures.push(format!(
                "{}: {}/{} servers, {} values",
                label(row),
                row.decoded_servers,
                row.servers,
                row.decoded_values
            ));
        }
    }
    let mut checked = 0;
    for (topology, r) in [(TopologyKind::Star, 2), (TopologyKind::Star, 4), (TopologyKind::FatTree, 2), (TopologyKind::FatTree, 4)] {
        match content_check(topology, r) {
            Ok(n) => checked += n,
            Err(e) => failures.push(format!("{topology} r={r}: {e}")),
        }
    }
    let trials = match corruption_check() {
        Ok(n) => n,
        Err(e) => {
            failures.push(e);
            0
        }
    };
    outcome(
        failures,
        format!("all servers decode in {} runs; {checked} values match the PRF; {trials} single-bit flips rejected", all.len()),
    )
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let mut count = 0;
    for k in 2..=32usize {
        for r in 1..k {
            let gain = uncoded_load(k, r, 1).unwrap() / l_star(k, r, 1).unwrap();
            if gain != int(r as u64) {
                failures.push(format!("K={k} r={r}: gain {}", ratio_string(&gain)));
            }
            count += 1;
        }
    }
    outcome(failures, format!("uncoded/L* = r at {count} points"))
}

fn criterion_8(fat_tree: &[&RunRow]) -> Outcome {
    let mut failures = Vec::new();
    let mut asserted = 0;
    for row in fat_tree.iter().filter(|r| r.full_occupancy) {
        let max_of = |layer: Layer| row.loads.layers.iter().find(|l| l.layer == layer).map(|l| l.max_load.clone());
        let (Some(bottom), Some(middle), Some(top)) =
            (max_of(Layer::ServerEdge), max_of(Layer::EdgeAggregation), max_of(Layer::AggregationCore))
        else {
            failures.push(format!("{}: missing layer", label(row)));
            continue;
        };
        asserted += 1;
        if !(bottom >= middle && middle >= top) {
            failures.push(format!(
                "{}: {} >= {} >= {} fails",
                label(row),
                ratio_string(&bottom),
                ratio_string(&middle),
                ratio_string(&top)
            ));
        }
    }
    if asserted == 0 {
        failures.push("no full-occupancy fat-tree run".into());
    }
    outcome(failures, format!("server-edge >= edge-aggregation >= aggregation-core in {asserted} runs"))
}

fn criterion_9(fat_tree: &[&RunRow]) -> Outcome {
    let mut failures = Vec::new();
    let mut audited = 0;
    for row in fat_tree {
        let emissions: u64 = row
            .check("flow conservation")
            .and_then(|c| c.detail.split_whitespace().next())
            .and_then(|n| n.parse().ok())
            .unwrap_or(0);
        if row.r < row.servers && emissions == 0 {
            failures.push(format!("{}: no audited emissions", label(row)));
        }
        audited += emissions;
    }
    // A switch emitting bits it never received must be caught.
    let job = JobSpec::new(16, 2, 1, 120, 16, T_DIVISIBLE).unwrap();
    let placement = place_files(&job);
    let assignment = assign_reducers(&job);
    let store = map_phase(&job, &placement, 1);
    let set = build_messages(&job, &placement, &assignment, &store, 4).unwrap();
    let mut buffer = SwitchBuffer::default();
    buffer.receive(set.messages[0].clone());
    let mut forged = set.messages[0].clone();
    let bit = forged.payload.len() - 1;
    let flipped = !forged.payload[bit];
    forged.payload.set(bit, flipped);
    if buffer.audit(&forged, 2).is_ok() {
        failures.push("audit accepted a forged payload".into());
    }
    let halves = set.messages[0].split(2).unwrap();
    if buffer.audit(&halves[1], 2).is_err() {
        failures.push("audit rejected a genuine piece".into());
    }
    if buffer.audit(&set.messages[1], 2).is_ok() {
        failures.push("audit accepted a never-received message".into());
    }
    outcome(failures, format!("{audited} switch emissions audited bit-exact; forged emissions rejected"))
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if elapsed > limit {
        out.pass = false;
        out.detail = format!("{} (took {:.2}s, limit {:.0}s)", out.detail, elapsed.as_secs_f64(), limit.as_secs_f64());
    }
    (out, elapsed)
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Outcome, Duration)> = Vec::new();

    let (c1, t1) = timed(FORMULA_LIMIT, criterion_1);
    results.push((1, c1, t1));

    let start = Instant::now();
    let star = runs(TopologyKind::Star, T_DIVISIBLE, &STAR_LOADS);
    let star_time = start.elapsed();
    let start = Instant::now();
    let fat = runs(TopologyKind::FatTree, T_DIVISIBLE, &FAT_TREE_LOADS)
        .and_then(|a| runs(TopologyKind::FatTree, T_PADDED, &FAT_TREE_LOADS).map(|b| (a, b)));
    let fat_time = start.elapsed();

    match (&star, &fat) {
        (Ok(star), Ok((divisible, padded))) => {
            let (c2, t2) = timed(STAR_LIMIT.saturating_sub(star_time), || criterion_2(star));
            results.push((2, c2, t2 + star_time));
            let (c3, t3) = timed(FAT_TREE_LIMIT.saturating_sub(fat_time), || criterion_3(divisible, padded));
            results.push((3, c3, t3 + fat_time));

            let fat_rows: Vec<&RunRow> = divisible.iter().chain(padded).collect();
            let all_rows: Vec<&RunRow> = star.iter().chain(fat_rows.iter().copied()).collect();
            let (c4, t4) = timed(FORMULA_LIMIT, || criterion_4(&fat_rows));
            results.push((4, c4, t4));
            let (c5, t5) = timed(FORMULA_LIMIT, || criterion_5(&all_rows));
            results.push((5, c5, t5));
            let (c6, t6) = timed(FAT_TREE_LIMIT, || criterion_6(&all_rows));
            results.push((6, c6, t6));
            let (c7, t7) = timed(FORMULA_LIMIT, criterion_7);
            results.push((7, c7, t7));
            let (c8, t8) = timed(FORMULA_LIMIT, || criterion_8(&fat_rows));
            results.push((8, c8, t8));
            let (c9, t9) = timed(FAT_TREE_LIMIT, || criterion_9(&fat_rows));
            results.push((9, c9, t9));
        }
        _ => {
            let reason = [star.as_ref().err(), fat.as_ref().err()]
                .into_iter()
                .flatten()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            for n in [2, 3, 4, 5, 6, 8, 9] {
                results.push((n, Outcome { pass: false, detail: format!("pipeline error: {reason}") }, Duration::ZERO));
            }
            let (c7, t7) = timed(FORMULA_LIMIT, criterion_7);
            results.push((7, c7, t7));
        }
    }

    results.sort_by_key(|(n, _, _)| *n);
    let mut all_pass = true;
    for (n, out, elapsed) in &results {
        all_pass &= out.pass;
        println!(
            "criterion {n}: {} ({:.2}s) {}",
            if out.pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            out.detail
        );
    }
    let passed = results.iter().filter(|(_, o, _)| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
